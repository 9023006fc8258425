// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vala/assignnet.hpp"
#include "vala/attention.hpp"
#include "vala/baselines.hpp"
#include "vala/checkpoint.hpp"
#include "vala/compressor.hpp"
#include "vala/ddim.hpp"
#include "vala/error.hpp"
#include "vala/objective.hpp"
#include "vala/rng.hpp"
#include "vala/synth.hpp"
#include "vala/tensor_io.hpp"
#include "vala/tokens.hpp"
