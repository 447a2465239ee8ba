// Command-line front end: encode, decode, train, eval, gendata.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "plac/codec.hpp"
#include "plac/error.hpp"
#include "plac/synth_data.hpp"
#include "plac/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VerifyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct GroupingFlags {
  std::uint64_t seed = 42;
  std::uint32_t s_star = 1u << 14;
  std::uint32_t alpha = 128;
  std::uint32_t ratio = 2;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "grouping seed")->capture_default_str();
    app->add_option("--s-star", s_star, "maximum group size")->check(CLI::Range(1u, 0xFFFFFFFFu))->capture_default_str();
    app->add_option("--alpha", alpha, "first group is N/alpha points")->check(CLI::Range(1u, 65535u))->capture_default_str();
    app->add_option("--ratio", ratio, "group growth ratio")->check(CLI::Range(2u, 255u))->capture_default_str();
  }
  plac::GroupingConfig config() const { return {ratio, alpha, s_star, seed}; }
};

std::vector<std::string> list_plys(const std::string& dir) {
  if (!fs::is_directory(dir)) throw plac::Error("'" + dir + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ply") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw plac::Error("no .ply files in '" + dir + "'");
  return files;
}

json report_json(const plac::EncodeReport& rep, double enc_s, double dec_s) {
  std::vector<double> per_group;
  for (const auto& g : rep.groups) per_group.push_back(g.bpp());
  return {{"n_points", rep.n_points}, {"n_groups", rep.groups.size()}, {"bpp", rep.actual_bpp()},
          {"per_group_bpp", per_group}, {"enc_seconds", enc_s}, {"dec_seconds", dec_s}};
}

void print_report(const plac::EncodeReport& rep, double enc_s) {
  std::printf("N=%zu M=%zu bpp=%.4f (model %.4f) stream=%zu bytes time=%.3fs\n", rep.n_points, rep.groups.size(),
              rep.actual_bpp(), rep.estimated_bpp(), rep.stream_bytes, enc_s);
  std::printf("group      size      bpp\n");
  for (std::size_t g = 0; g < rep.groups.size(); ++g) {
    std::printf("%5zu %9u %8.4f\n", g + 1, rep.groups[g].size, rep.groups[g].bpp());
  }
}

plac::PointCloud load_cloud(const std::string& path, const std::string& mode) {
  plac::PointCloud cloud = plac::read_ply_file(path);
  if (mode == "color" && cloud.channel_mode != plac::ChannelMode::kColor3) {
    throw plac::Error("'" + path + "' has no red/green/blue attributes");
  }
  if (mode == "reflectance" && cloud.channel_mode != plac::ChannelMode::kReflectance1) {
    throw plac::Error("'" + path + "' has no reflectance attribute");
  }
  return cloud;
}

int run_encode(const std::string& input, const std::string& weights, const std::string& output,
               const GroupingFlags& gf, std::optional<int> k, const std::string& mode, int threads, bool geo_sum,
               bool as_json) {
  const plac::ModelWeights w = plac::load_weights_file(weights);
  const plac::PointCloud cloud = load_cloud(input, mode);
  plac::CodecConfig cfg;
  cfg.grouping = gf.config();
  cfg.K = k.value_or(w.config.K);
  cfg.threads = threads;
  cfg.geometry_checksum = geo_sum;
  const auto t0 = std::chrono::steady_clock::now();
  plac::EncodeReport rep;
  const auto stream = plac::encode(cloud, w, cfg, &rep);
  const double enc_s = seconds_since(t0);
  plac::write_file_atomic(output, stream);
  if (as_json) {
    std::cout << report_json(rep, enc_s, 0.0).dump() << "\n";
  } else {
    print_report(rep, enc_s);
  }
  return kExitOk;
}

int run_decode(const std::string& input, const std::string& geometry, const std::string& weights,
               const std::string& output, const std::string& verify, int threads) {
  const plac::ModelWeights w = plac::load_weights_file(weights);
  const auto stream = plac::read_file_bytes(input);
  const plac::PointCloud geo = plac::read_ply_file(geometry);
  plac::DecodeOptions opts;
  opts.threads = threads;
  const auto t0 = std::chrono::steady_clock::now();
  const plac::PointCloud out = plac::decode(stream, geo.positions, w, opts);
  const double dec_s = seconds_since(t0);
  std::optional<plac::PointCloud> original;
  if (!verify.empty()) original = plac::to_rgb(plac::read_ply_file(verify));
  plac::write_ply_file(output, out, plac::PlyFormat::kBinaryLittleEndian);
  std::printf("decoded %zu points in %.3fs\n", out.size(), dec_s);
  if (original) {
    if (original->size() != out.size() || original->attributes != out.attributes ||
        original->positions != out.positions) {
      throw VerifyError("decoded attributes differ from '" + verify + "'");
    }
    std::printf("verified: attributes match '%s'\n", verify.c_str());
  }
  return kExitOk;
}

struct TrainFlags {
  std::string data, out, log, val_dir;
  int steps = 5000;
  double lr = 0.0005;
  int batch = 8;
  std::uint64_t seed = 1;
  int points_per_group = 8;
  int k = 8, layers = 5, width = 128;
  bool no_center = false, no_rescale = false;
  int validate_every = 500;
};

std::vector<plac::PointCloud> load_dir(const std::string& dir) {
  std::vector<plac::PointCloud> clouds;
  for (const auto& f : list_plys(dir)) clouds.push_back(plac::read_ply_file(f));
  return clouds;
}

int run_train(const TrainFlags& f) {
  const auto data = load_dir(f.data);
  std::vector<plac::PointCloud> val;
  if (!f.val_dir.empty()) val = load_dir(f.val_dir);
  plac::NetworkConfig net;
  net.K = f.k;
  net.L = f.layers;
  net.C = f.width;
  net.channels = plac::channel_count(data.front().channel_mode);
  net.normalization = {!f.no_center, !f.no_rescale};
  net.validate();
  plac::TrainConfig cfg;
  cfg.learning_rate = f.lr;
  cfg.batch_size = f.batch;
  cfg.steps = f.steps;
  cfg.seed = f.seed;
  cfg.points_per_group = f.points_per_group;
  cfg.validate_every = f.validate_every;
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = plac::train(data, plac::init_weights(net, f.seed), cfg, val, [&](const plac::TrainLogRow& r) {
    std::fprintf(stderr, "step %6d  loss %s  val_bpp %s  (%.0fs)\n", r.step,
                 std::isnan(r.loss) ? "-" : std::to_string(r.loss).c_str(),
                 std::isnan(r.val_bpp) ? "-" : std::to_string(r.val_bpp).c_str(), seconds_since(t0));
  });
  plac::save_weights_file(f.out, result.weights);
  const std::string csv = plac::format_log_csv(result.log);
  const std::string log_path = f.log.empty() ? f.out + ".csv" : f.log;
  plac::write_file_atomic(log_path, std::vector<std::uint8_t>(csv.begin(), csv.end()));
  std::printf("wrote %s and %s after %d steps (%.1fs)\n", f.out.c_str(), log_path.c_str(), f.steps, seconds_since(t0));
  return kExitOk;
}

int run_eval(const std::string& dir, const std::string& weights, const GroupingFlags& gf, int threads, bool as_json) {
  const plac::ModelWeights w = plac::load_weights_file(weights);
  const auto files = list_plys(dir);
  plac::CodecConfig cfg;
  cfg.grouping = gf.config();
  cfg.K = w.config.K;
  cfg.threads = threads;
  plac::DecodeOptions dopts;
  dopts.threads = threads;
  json clouds = json::array();
  double sum = 0.0, lo = INFINITY, hi = -INFINITY, enc_total = 0.0, dec_total = 0.0;
  for (const auto& file : files) {
    const plac::PointCloud cloud = plac::read_ply_file(file);
    auto t0 = std::chrono::steady_clock::now();
    plac::EncodeReport rep;
    const auto stream = plac::encode(cloud, w, cfg, &rep);
    const double enc_s = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    const plac::PointCloud back = plac::decode(stream, cloud.positions, w, dopts);
    const double dec_s = seconds_since(t0);
    if (back.attributes != plac::to_rgb(cloud).attributes) throw VerifyError("round trip failed for '" + file + "'");
    const double bpp = rep.actual_bpp();
    sum += bpp;
    lo = std::min(lo, bpp);
    hi = std::max(hi, bpp);
    enc_total += enc_s;
    dec_total += dec_s;
    json j = report_json(rep, enc_s, dec_s);
    j["file"] = fs::path(file).filename().string();
    clouds.push_back(std::move(j));
  }
  const double n = static_cast<double>(files.size());
  if (as_json) {
    const json summary = {{"clouds", clouds},       {"mean_bpp", sum / n},
                          {"min_bpp", lo},          {"max_bpp", hi},
                          {"mean_enc_seconds", enc_total / n}, {"mean_dec_seconds", dec_total / n}};
    std::cout << summary.dump() << "\n";
  } else {
    std::printf("clouds=%zu mean_bpp=%.4f min_bpp=%.4f max_bpp=%.4f mean_enc=%.3fs mean_dec=%.3fs\n", files.size(),
                sum / n, lo, hi, enc_total / n, dec_total / n);
  }
  return kExitOk;
}

int run_gendata(std::size_t count, std::size_t points, const std::string& out, std::uint64_t seed) {
  plac::write_dataset(out, count, points, seed);
  std::printf("wrote %zu clouds of %zu points to %s\n", count, points, out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned lossless point cloud attribute codec"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads for window prediction")->check(CLI::Range(1, 256));

  std::function<int()> action;

  // encode
  auto* enc = app.add_subcommand("encode", "compress the attributes of a PLY file");
  std::string e_in, e_w, e_out, e_mode = "auto";
  std::optional<int> e_k;
  bool e_geo = false, e_json = false;
  GroupingFlags e_g;
  enc->add_option("--input", e_in, "input PLY")->required();
  enc->add_option("--weights", e_w, "model weights")->required();
  enc->add_option("--output", e_out, "output stream")->required();
  enc->add_option("--k", e_k, "context window size (defaults to the model's)")->check(CLI::Range(1, 64));
  enc->add_option("--mode", e_mode, "attribute kind")->check(CLI::IsMember({"auto", "color", "reflectance"}));
  enc->add_flag("--geometry-checksum", e_geo, "store a checksum of the positions in the header");
  enc->add_flag("--json", e_json, "machine-readable report");
  e_g.add_to(enc);
  enc->callback([&] { action = [&] { return run_encode(e_in, e_w, e_out, e_g, e_k, e_mode, threads, e_geo, e_json); }; });

  // decode
  auto* dec = app.add_subcommand("decode", "reconstruct attributes from a stream and its geometry");
  std::string d_in, d_geo, d_w, d_out, d_verify;
  dec->add_option("--input", d_in, "input stream")->required();
  dec->add_option("--geometry", d_geo, "PLY with the same positions in the same order")->required();
  dec->add_option("--weights", d_w, "model weights")->required();
  dec->add_option("--output", d_out, "output PLY")->required();
  dec->add_option("--verify", d_verify, "original PLY to compare against (exit 3 on mismatch)");
  dec->callback([&] { action = [&] { return run_decode(d_in, d_geo, d_w, d_out, d_verify, threads); }; });

  // train
  auto* tr = app.add_subcommand("train", "train model weights on a directory of PLY files");
  TrainFlags tf;
  tr->add_option("--data", tf.data, "training PLY directory")->required();
  tr->add_option("--out", tf.out, "output weights file")->required();
  tr->add_option("--steps", tf.steps, "optimizer steps")->check(CLI::Range(0, 100000000))->capture_default_str();
  tr->add_option("--lr", tf.lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--batch", tf.batch, "clouds per step")->check(CLI::Range(1, 4096))->capture_default_str();
  tr->add_option("--seed", tf.seed, "initialization and sampling seed")->capture_default_str();
  tr->add_option("--points-per-group", tf.points_per_group, "targets per group per cloud (0 = all)")
      ->check(CLI::Range(0, 1 << 24))
      ->capture_default_str();
  tr->add_option("--log", tf.log, "CSV log path (default <out>.csv)");
  tr->add_option("--val-data", tf.val_dir, "validation PLY directory");
  tr->add_option("--validate-every", tf.validate_every, "steps between validation passes")->check(CLI::Range(0, 100000000));
  tr->add_option("--k", tf.k, "context window size")->check(CLI::Range(1, 64))->capture_default_str();
  tr->add_option("--layers", tf.layers, "attention units")->check(CLI::Range(1, 64))->capture_default_str();
  tr->add_option("--width", tf.width, "feature width")->check(CLI::Range(1, 4096))->capture_default_str();
  tr->add_flag("--no-center", tf.no_center, "disable spatial centering");
  tr->add_flag("--no-rescale", tf.no_rescale, "disable spatial rescaling");
  tr->callback([&] { action = [&] { return run_train(tf); }; });

  // eval
  auto* ev = app.add_subcommand("eval", "round-trip every PLY in a directory and report bpp");
  std::string v_dir, v_w;
  bool v_json = false;
  GroupingFlags v_g;
  ev->add_option("--data", v_dir, "PLY directory")->required();
  ev->add_option("--weights", v_w, "model weights")->required();
  ev->add_flag("--json", v_json, "machine-readable report");
  v_g.add_to(ev);
  ev->callback([&] { action = [&] { return run_eval(v_dir, v_w, v_g, threads, v_json); }; });

  // gendata
  auto* gd = app.add_subcommand("gendata", "generate colorized synthetic clouds");
  std::size_t g_count = 0, g_points = 2048;
  std::string g_out;
  std::uint64_t g_seed = 0;
  gd->add_option("--count", g_count, "number of clouds")->required()->check(CLI::Range(1, 10000000));
  gd->add_option("--points", g_points, "points per cloud")->check(CLI::Range(1, 100000000))->capture_default_str();
  gd->add_option("--out", g_out, "output directory")->required();
  gd->add_option("--seed", g_seed, "dataset seed")->capture_default_str();
  gd->callback([&] { action = [&] { return run_gendata(g_count, g_points, g_out, g_seed); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    return action();
  } catch (const VerifyError& e) {
    std::fprintf(stderr, "verification failed: %s\n", e.what());
    return kExitVerify;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
