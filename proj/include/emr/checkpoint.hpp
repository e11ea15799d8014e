#pragma once

#include "emr/network.hpp"

#include <filesystem>

namespace emr {

/*
 * Single-file container:
 *   8 bytes   magic "EMRCKPT1"
 *   8 bytes   little-endian header length
 *   header    JSON {config, genotype, seed, epoch, arrays: [{name, offset, count}]}
 *   payload   little-endian float32 arrays at the listed offsets
 */
struct CheckpointInfo
{
  NetworkConfig  config;
  Genotype       genotype;
  std::uint64_t  seed = 0;
  int            epoch = 0;
  nlohmann::json extra;
};

void save_checkpoint(std::filesystem::path const &path, Model &model, std::uint64_t seed, int epoch,
                     nlohmann::json const &extra = nlohmann::json::object());

struct LoadedCheckpoint
{
  CheckpointInfo info;
  Model          model;
};

LoadedCheckpoint load_checkpoint(std::filesystem::path const &path);

} // namespace emr
