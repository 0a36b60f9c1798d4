#pragma once

#include <filesystem>
#include <string>

#include "datamodels/core_data.hpp"
#include "datamodels/trainers.hpp"

namespace dmcli {

/// CSV rows are `feature_1,...,feature_p,label`. A first line that does not
/// parse as numbers is treated as a header. For regression the last column
/// is a real-valued response.
dm::TrainingSet load_csv(const std::filesystem::path& path, bool regression);

/// Raw little-endian f32 tensor with a JSON sidecar at `<path>.json`:
/// {"rows": R, "cols": C, "labels": [...]} or {"rows", "cols", "responses"}.
/// An optional "num_classes" overrides max(label) + 1.
dm::TrainingSet load_f32(const std::filesystem::path& path, bool regression);

dm::TrainingSet load_dataset(const std::filesystem::path& path, const std::string& format,
                             bool regression);

}  // namespace dmcli
