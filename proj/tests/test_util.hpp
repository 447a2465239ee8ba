#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "plac/cloud_io.hpp"
#include "plac/grouping.hpp"
#include "plac/qma_net.hpp"

namespace test {

// Random positions in [0, 1000)^3 with random 8-bit attributes.
inline plac::PointCloud small_cloud(std::size_t n, std::uint64_t seed,
                                    plac::ChannelMode mode = plac::ChannelMode::kColor3) {
  plac::SplitMix64 rng(seed);
  plac::PointCloud c;
  c.channel_mode = mode;
  c.positions.resize(n);
  c.attributes.resize(n);
  const int channels = plac::channel_count(mode);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) c.positions[i][k] = 1000.0 * rng.uniform();
    c.attributes[i] = {0, 0, 0};
    for (int k = 0; k < channels; ++k) c.attributes[i][k] = static_cast<std::int16_t>(rng.below(256));
  }
  return c;
}

// A narrow network so unit tests stay fast.
inline plac::ModelWeights tiny_weights(std::uint64_t seed, int channels = 3, int k = 8) {
  plac::NetworkConfig cfg;
  cfg.K = k;
  cfg.L = 2;
  cfg.C = 16;
  cfg.channels = channels;
  return plac::init_weights(cfg, seed);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("plac_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test
