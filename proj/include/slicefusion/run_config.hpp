#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "slicefusion/config.hpp"
#include "slicefusion/fusion.hpp"
#include "slicefusion/train.hpp"

namespace slicefusion {

/// Everything a command needs: model shape, training settings and paths.
///
/// Text form is one `key = value` per line; `#` starts a comment, blank lines are
/// ignored, and unknown or repeated keys are errors. Keys:
///
///   depth height width patch_depth patch_height patch_width pool hidden
///   tokens_2d text_dim mixing
///   decoder_width ff_hidden vocab max_len
///   stage strategy lr epochs batch_size seed max_steps
///   data_dir checkpoint output_dir
///
/// Relative paths resolve against the directory of the config file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path output_dir;

  void validate() const;
};

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Text form that parses back to an equal config (paths written as stored).
std::string to_text(const RunConfig& cfg);

}  // namespace slicefusion
