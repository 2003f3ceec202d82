#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "slicefusion/tensor.hpp"

namespace slicefusion {

/// "slice_index,score" header, then one row per slice.
std::string scores_csv(const Tensor& scores);

/// Bar chart of per-slice scores with a dashed reference line at 1/N.
std::string scores_svg(const Tensor& scores, std::string_view title = {});

void write_attention_profile(const Tensor& scores, const std::filesystem::path& csv_path,
                             const std::filesystem::path& svg_path, std::string_view title = {});

}  // namespace slicefusion
