// SPDX-License-Identifier: Apache-2.0
//
// vala command line: gen | train | compress | bench | ddim | attend
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config_file.hpp"
#include "vala/vala.hpp"

namespace {

using namespace vala;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct GenArgs {
  bool mixture = false;
  bool video = false;
  bool near_duplicate = false;
  std::int64_t clusters = 8;
  std::int64_t dim = 16;
  std::int64_t points_per_cluster = 512;
  double center_scale = 1.0;
  double noise_sigma = 0.05;
  double noise_fraction = 0.0;
  std::size_t frames = 4, channels = 4, height = 16, width = 16, objects = 3;
  double drift = 1.0;
  std::int64_t tokens = 1024;
  std::uint64_t seed = 0;
  std::string out = "vala_data";
};

struct TrainArgs {
  std::string input;
  std::string checkpoint = "vala.ckpt";
  std::string report;
  std::string resume;
  std::int64_t anchors = 512;
  std::int64_t top_k = 8;
  double tau = 0.1;
  double lambda_vi = 0.1;
  std::string prior = "uniform";
  bool vi_mean = false;
  std::int64_t steps = 2000;
  std::int64_t log_every = 100;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string hidden = "128,128";
  std::int64_t subsample = 0;
  std::uint64_t seed = 0;
};

struct CompressArgs {
  std::string input;
  std::string checkpoint;
  std::string out = "vala_compressed";
  std::uint64_t seed = 0;
};

struct BenchArgs {
  std::string tokens = "1024,2048,4096,8192";
  std::string anchors = "512";
  std::string modes = "full,anchor";
  std::int64_t dim = 64;
  std::int64_t head_dim = 64;
  int reps = 3;
  bool single_thread = false;
  std::uint64_t seed = 0;
  std::string out;
};

struct DdimArgs {
  int steps = 50;
  std::string predictor = "t-only";
  double guidance = std::numeric_limits<double>::quiet_NaN();
  std::int64_t dim = 64;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  std::uint64_t seed = 0;
  std::string dump;
};

struct AttendArgs {
  std::string input;
  std::string anchors_file;
  std::string out = "vala_attention.vlt";
  std::int64_t head_dim = 64;
  bool cross_frame = false;
  std::uint64_t seed = 0;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = cli::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::int64_t> parse_int_list(const std::string& text, const char* what) {
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(std::string(what) + ": '" + item + "' is not an integer");
    }
  }
  return out;
}

void echo_config(const CLI::App& sub) {
  std::cerr << "# resolved config [" << sub.get_name() << "]\n";
  std::istringstream lines(sub.config_to_str(true, false));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty()) std::cerr << "#   " << line << "\n";
  }
}

void write_labels_csv(const std::string& path, const std::vector<Eigen::Index>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::io_failure, "cannot write " + path);
  out << "token,label\n";
  for (std::size_t m = 0; m < labels.size(); ++m) out << m << "," << labels[m] << "\n";
}

int run_gen(const GenArgs& a) {
  const int kinds = int(a.mixture) + int(a.video) + int(a.near_duplicate);
  if (kinds != 1) throw ConfigError("gen: pick exactly one of --mixture, --video, --near-duplicate");
  const std::string tensor_path = a.out + ".vlt";
  if (a.mixture) {
    synth::MixtureSpec spec{a.clusters, a.dim, a.points_per_cluster, a.center_scale,
                            a.noise_sigma, a.seed};
    if (a.noise_fraction > 0.0) {
      spec.noise_sigma = a.noise_fraction * synth::min_center_separation(synth::mixture_centers(spec));
    }
    const auto data = synth::gaussian_mixture(spec);
    save_tensor(tensor_path, data.tokens);
    write_labels_csv(a.out + ".labels.csv", data.labels);
    std::cout << "wrote " << tensor_path << " (" << data.tokens.tokens() << "x"
              << data.tokens.dim() << ") and " << a.out << ".labels.csv\n";
  } else if (a.video) {
    synth::DriftVideoSpec spec;
    spec.frames = a.frames;
    spec.channels = a.channels;
    spec.height = a.height;
    spec.width = a.width;
    spec.n_objects = a.objects;
    spec.drift_per_frame = a.drift;
    spec.seed = a.seed;
    save_latent(tensor_path, synth::drift_video(spec));
    std::cout << "wrote " << tensor_path << " (" << a.frames << "x" << a.channels << "x"
              << a.height << "x" << a.width << ")\n";
  } else {
    save_tensor(tensor_path, synth::near_duplicate_tokens(a.tokens, a.dim, a.noise_sigma, a.seed));
    std::cout << "wrote " << tensor_path << " (" << a.tokens << "x" << a.dim << ")\n";
  }
  return kExitOk;
}

int run_train(const TrainArgs& a) {
  const TokenMatrix tokens = load_tokens(a.input);
  TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.log_every = a.log_every;
  cfg.seed = a.seed;
  cfg.vala.anchors = a.anchors;
  cfg.vala.top_k = a.top_k;
  cfg.vala.temperature = a.tau;
  cfg.vala.lambda_vi = a.lambda_vi;
  cfg.vala.prior = parse_prior_mode(a.prior);
  cfg.vala.vi_token_mean = a.vi_mean;
  cfg.adam = {a.lr, a.beta1, a.beta2, a.adam_eps};
  cfg.hidden_dims.clear();
  for (auto h : parse_int_list(a.hidden, "--hidden")) cfg.hidden_dims.push_back(h);
  if (a.subsample > 0) cfg.subsample = a.subsample;

  TrainResult result;
  if (a.resume.empty()) {
    result = train(tokens, cfg);
  } else {
    Checkpoint ck = load_checkpoint(a.resume);
    ck.adam.hyper = cfg.adam;
    result = train_from(tokens.values(), cfg, std::move(ck.net), std::move(ck.adam));
  }
  save_checkpoint(a.checkpoint, result.net, result.adam);
  if (!a.report.empty()) {
    std::ofstream out(a.report, std::ios::trunc);
    if (!out) throw FormatError(FormatErrc::io_failure, "cannot write " + a.report);
    write_report_csv(out, result.report);
  }

  const auto final_loss = total_loss(result.net, tokens.values(), cfg.vala);
  const auto r = soft_assign(forward(result.net, tokens));
  std::printf("steps=%llu final_total=%.10g final_contrastive=%.10g final_regularizer=%.10g "
              "final_entropy=%.10g\n",
              static_cast<unsigned long long>(result.adam.step_count), final_loss.objective.total,
              final_loss.objective.contrastive, final_loss.objective.regularizer,
              anchor_usage_entropy(r));
  return kExitOk;
}

int run_compress(const CompressArgs& a) {
  const TokenMatrix tokens = load_tokens(a.input);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.net.input_dim() != tokens.dim()) {
    throw DimensionError("checkpoint expects c=" + std::to_string(ck.net.input_dim()) +
                         ", input has c=" + std::to_string(tokens.dim()));
  }
  const Compressed out = compress(tokens, ck.net);
  save_tensor(a.out + "_R.vlt", out.assignment.values);
  save_tensor(a.out + "_C.vlt", out.anchors.values);

  const double entropy = anchor_usage_entropy(out.assignment);
  const double qerr = quantization_error(tokens.values(), out.anchors.values);
  std::printf("anchors=%lld entropy=%.10g max_entropy=%.10g quantization_error=%.10g",
              static_cast<long long>(out.anchors.anchors()), entropy,
              std::log(static_cast<double>(out.anchors.anchors())), qerr);
  if (out.anchors.anchors() <= tokens.tokens()) {
    const auto km = kmeans(tokens, {out.anchors.anchors(), a.seed, 300, 1e-10});
    const double km_err = km.inertia / static_cast<double>(tokens.tokens());
    std::printf(" kmeans_error=%.10g ratio=%.10g", km_err,
                km_err > 0.0 ? qerr / km_err : std::numeric_limits<double>::infinity());
  }
  std::printf("\n");
  return kExitOk;
}

Matrix random_tokens(Eigen::Index rows, Eigen::Index cols, SeededRng& rng) {
  Matrix z(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) z(i, j) = rng.normal();
  return z;
}

int run_bench(const BenchArgs& a) {
  if (a.single_thread) Eigen::setNbThreads(1);
  if (a.reps < 1) throw ConfigError("bench: reps must be >= 1");
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::trunc);
    if (!file) throw FormatError(FormatErrc::io_failure, "cannot write " + a.out);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  out << "mode,M,A,c,d,wall_ns,flops\n";

  const auto projection = make_projection(a.dim, a.head_dim, a.seed);
  const auto token_sweep = parse_int_list(a.tokens, "--tokens");
  const auto anchor_sweep = parse_int_list(a.anchors, "--anchors");
  for (const auto& mode_name : split_list(a.modes)) {
    if (mode_name != "full" && mode_name != "anchor") {
      throw ConfigError("bench: unknown mode '" + mode_name + "'");
    }
    const bool full = mode_name == "full";
    for (auto m : token_sweep) {
      if (m < 1) throw ConfigError("bench: M must be >= 1");
      for (auto anchors : anchor_sweep) {
        if (anchors < 1) throw ConfigError("bench: A must be >= 1");
        SeededRng rng(a.seed + static_cast<std::uint64_t>(m));
        const Matrix z = random_tokens(m, a.dim, rng);
        const Matrix c = full ? Matrix() : random_tokens(anchors, a.dim, rng);
        std::int64_t best = std::numeric_limits<std::int64_t>::max();
        double sink = 0.0;
        for (int rep = 0; rep < a.reps; ++rep) {
          const auto t0 = std::chrono::steady_clock::now();
          const Matrix y = full ? full_attention(z, projection) : anchor_attention(z, c, projection);
          const auto t1 = std::chrono::steady_clock::now();
          sink += y(0, 0);
          best = std::min<std::int64_t>(
              best, std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
        }
        if (!std::isfinite(sink)) throw NumericalError("bench: non-finite attention output");
        const auto flops = flop_count({static_cast<std::uint64_t>(m),
                                       static_cast<std::uint64_t>(anchors),
                                       static_cast<std::uint64_t>(a.dim),
                                       static_cast<std::uint64_t>(a.head_dim),
                                       full ? KernelMode::full : KernelMode::anchor,
                                       {}});
        out << mode_name << "," << m << "," << (full ? m : anchors) << "," << a.dim << ","
            << a.head_dim << "," << best << "," << flops << "\n";
        if (full) break;  // A is irrelevant for the full kernel
      }
    }
  }
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) == 0) {
    std::cerr << "# peak_rss_kb=" << usage.ru_maxrss << " (best effort, process-wide)\n";
  }
  return kExitOk;
}

int run_ddim(const DdimArgs& a) {
  const auto sched = ddim::linear_schedule(a.steps, a.beta_start, a.beta_end);
  ddim::NoisePredictor pred = ddim::make_predictor(a.predictor);
  if (!std::isnan(a.guidance)) {
    pred = ddim::guided(std::move(pred), {a.guidance, ddim::kSourceCondition, ddim::kNullCondition});
  }
  if (a.dim < 1) throw ConfigError("ddim: dim must be >= 1");
  SeededRng rng(a.seed);
  ddim::Latent z0(a.dim);
  for (Eigen::Index i = 0; i < z0.size(); ++i) z0(i) = rng.normal();

  const auto inverted =
      ddim::run_trajectory(z0, sched, pred, ddim::Direction::invert, ddim::kSourceCondition);
  const auto restored = ddim::run_trajectory(inverted.back(), sched, pred,
                                             ddim::Direction::denoise, ddim::kSourceCondition);
  const double err = (restored.back() - z0).cwiseAbs().maxCoeff();
  if (!std::isfinite(err)) throw NumericalError("ddim: non-finite reconstruction");

  if (!a.dump.empty()) {
    std::filesystem::create_directories(a.dump);
    std::ofstream index(a.dump + "/index.txt", std::ios::trunc);
    index << "direction,position,timestep,file\n";
    auto dump = [&](const std::vector<ddim::Latent>& states, const char* name, bool forward_t) {
      for (std::size_t i = 0; i < states.size(); ++i) {
        char file[64];
        std::snprintf(file, sizeof file, "%s_%04zu.vlt", name, i);
        save_raw(a.dump + "/" + file, to_raw(Vector(states[i])));
        const int t = forward_t ? static_cast<int>(i) : a.steps - static_cast<int>(i);
        index << name << "," << i << "," << t << "," << file << "\n";
      }
    };
    dump(inverted, "invert", true);
    dump(restored, "denoise", false);
  }
  std::printf("steps=%d predictor=%s max_abs_error=%.6e\n", a.steps, a.predictor.c_str(), err);
  return kExitOk;
}

int run_attend(const AttendArgs& a) {
  const RawTensor raw = load_raw(a.input);
  if (a.cross_frame) {
    if (raw.extents.size() != 4) throw DimensionError("attend --cross-frame needs a rank-4 latent");
    const LatentTensor latent = to_latent(raw);
    const AlignedLatents aligned = align(latent);
    const auto proj = make_projection(static_cast<Eigen::Index>(latent.channels()), a.head_dim, a.seed);
    const auto frames = static_cast<Eigen::Index>(aligned.frames());
    Matrix out(static_cast<Eigen::Index>(aligned.positions()) * frames, a.head_dim);
    for (std::size_t p = 0; p < aligned.positions(); ++p) {
      out.middleRows(static_cast<Eigen::Index>(p) * frames, frames) =
          full_attention(aligned.location(p), proj);
    }
    save_tensor(a.out, out);
    std::printf("mode=cross-frame positions=%zu frames=%zu d=%lld\n", aligned.positions(),
                aligned.frames(), static_cast<long long>(a.head_dim));
    return kExitOk;
  }
  const TokenMatrix tokens =
      raw.extents.size() == 4 ? flatten(to_latent(raw)) : TokenMatrix(to_matrix(raw));
  const auto proj = make_projection(tokens.dim(), a.head_dim, a.seed);
  if (a.anchors_file.empty()) {
    save_tensor(a.out, full_attention(tokens, proj));
    std::printf("mode=full M=%lld d=%lld\n", static_cast<long long>(tokens.tokens()),
                static_cast<long long>(a.head_dim));
  } else {
    const Matrix anchors = to_matrix(load_raw(a.anchors_file));
    save_tensor(a.out, anchor_attention(tokens.values(), anchors, proj));
    std::printf("mode=anchor M=%lld A=%lld d=%lld\n", static_cast<long long>(tokens.tokens()),
                static_cast<long long>(anchors.rows()), static_cast<long long>(a.head_dim));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent anchor compression toolkit"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  app.add_option("--config", "key = value file; command-line flags override it");

  auto add_seed = [](CLI::App* sub, std::uint64_t& seed) {
    sub->add_option("--seed", seed, "random seed")->envname("VALA_SEED");
  };

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate synthetic latents");
  gen_cmd->add_flag("--mixture", gen.mixture, "Gaussian mixture tokens + label sidecar");
  gen_cmd->add_flag("--video", gen.video, "drifting-bump latent video (rank 4)");
  gen_cmd->add_flag("--near-duplicate", gen.near_duplicate, "one base token plus small noise");
  gen_cmd->add_option("--clusters", gen.clusters);
  gen_cmd->add_option("--dim", gen.dim);
  gen_cmd->add_option("--points-per-cluster", gen.points_per_cluster);
  gen_cmd->add_option("--center-scale", gen.center_scale);
  gen_cmd->add_option("--noise-sigma", gen.noise_sigma);
  gen_cmd->add_option("--noise-fraction", gen.noise_fraction,
                      "if > 0, noise sigma = fraction * min center separation");
  gen_cmd->add_option("--frames", gen.frames);
  gen_cmd->add_option("--channels", gen.channels);
  gen_cmd->add_option("--height", gen.height);
  gen_cmd->add_option("--width", gen.width);
  gen_cmd->add_option("--objects", gen.objects);
  gen_cmd->add_option("--drift", gen.drift);
  gen_cmd->add_option("--tokens", gen.tokens, "token count for --near-duplicate");
  gen_cmd->add_option("--out", gen.out, "output prefix");
  add_seed(gen_cmd, gen.seed);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train the assignment network");
  train_cmd->add_option("--input", tr.input)->required();
  train_cmd->add_option("--checkpoint", tr.checkpoint);
  train_cmd->add_option("--report", tr.report, "CSV report path");
  train_cmd->add_option("--resume", tr.resume, "continue from this checkpoint");
  train_cmd->add_option("--anchors", tr.anchors);
  train_cmd->add_option("--top-k", tr.top_k);
  train_cmd->add_option("--tau", tr.tau);
  train_cmd->add_option("--lambda-vi", tr.lambda_vi);
  train_cmd->add_option("--prior", tr.prior, "none | uniform | gaussian");
  train_cmd->add_flag("--vi-mean", tr.vi_mean, "average the categorical KL over tokens");
  train_cmd->add_option("--steps", tr.steps);
  train_cmd->add_option("--log-every", tr.log_every);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--beta1", tr.beta1);
  train_cmd->add_option("--beta2", tr.beta2);
  train_cmd->add_option("--adam-eps", tr.adam_eps);
  train_cmd->add_option("--hidden", tr.hidden, "hidden widths, comma separated; empty = linear");
  train_cmd->add_option("--subsample", tr.subsample, "tokens per step, 0 = full batch");
  add_seed(train_cmd, tr.seed);

  CompressArgs cp;
  auto* compress_cmd = app.add_subcommand("compress", "extract anchors with a trained network");
  compress_cmd->add_option("--input", cp.input)->required();
  compress_cmd->add_option("--checkpoint", cp.checkpoint)->required();
  compress_cmd->add_option("--out", cp.out, "output prefix for _R.vlt and _C.vlt");
  add_seed(compress_cmd, cp.seed);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "time full vs anchor attention");
  bench_cmd->add_option("--tokens", bench.tokens, "M sweep, comma separated");
  bench_cmd->add_option("--anchors", bench.anchors, "A sweep, comma separated");
  bench_cmd->add_option("--modes", bench.modes, "full,anchor");
  bench_cmd->add_option("--dim", bench.dim);
  bench_cmd->add_option("--head-dim", bench.head_dim);
  bench_cmd->add_option("--reps", bench.reps, "timing repetitions; the minimum is reported");
  bench_cmd->add_flag("--single-thread", bench.single_thread);
  bench_cmd->add_option("--out", bench.out, "CSV path, stdout if empty");
  add_seed(bench_cmd, bench.seed);

  DdimArgs dd;
  auto* ddim_cmd = app.add_subcommand("ddim", "invert -> denoise round trip");
  ddim_cmd->add_option("--steps", dd.steps);
  ddim_cmd->add_option("--predictor", dd.predictor, "zero | t-only | linear");
  ddim_cmd->add_option("--guidance", dd.guidance, "classifier-free guidance scale");
  ddim_cmd->add_option("--dim", dd.dim);
  ddim_cmd->add_option("--beta-start", dd.beta_start);
  ddim_cmd->add_option("--beta-end", dd.beta_end);
  ddim_cmd->add_option("--dump", dd.dump, "directory for the trajectory tensors");
  add_seed(ddim_cmd, dd.seed);

  AttendArgs at;
  auto* attend_cmd = app.add_subcommand("attend", "run full, anchor or cross-frame attention");
  attend_cmd->add_option("--input", at.input)->required();
  attend_cmd->add_option("--anchors-file", at.anchors_file, "anchor matrix; enables anchor mode");
  attend_cmd->add_option("--out", at.out);
  attend_cmd->add_option("--head-dim", at.head_dim);
  attend_cmd->add_flag("--cross-frame", at.cross_frame, "attend across frames per location");
  add_seed(attend_cmd, at.seed);

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = cli::expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    for (const CLI::App* sub : app.get_subcommands()) echo_config(*sub);
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*compress_cmd) return run_compress(cp);
    if (*bench_cmd) return run_bench(bench);
    if (*ddim_cmd) return run_ddim(dd);
    if (*attend_cmd) return run_attend(at);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
