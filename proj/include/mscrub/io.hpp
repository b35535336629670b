#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mscrub/moments.hpp"

namespace mscrub {

struct CsvOptions {
    std::string label_column = "label"; // empty: unlabeled
    Index num_classes = 0;              // 0: infer as max label + 1
};

/// Parses CSV text with a header row. Malformed rows raise DataFormat with
/// the 1-based line number.
[[nodiscard]] LabeledDataset parse_csv(std::string_view text, const CsvOptions& options = {});
[[nodiscard]] std::string to_csv(const LabeledDataset& ds, std::string_view label_column = "label");

[[nodiscard]] LabeledDataset read_csv(const std::filesystem::path& path, const CsvOptions& options = {});

/// f32 little-endian row-major features plus a JSON sidecar
/// {"n","d","k","dtype":"f32","labels":"<path>","features":"<path>"[,"bounds"]}.
/// Relative paths resolve against the sidecar's directory. Without a
/// "features" entry the tensor sits next to the sidecar with extension .f32.
[[nodiscard]] LabeledDataset read_tensor(const std::filesystem::path& sidecar);

/// Writes <stem>.f32, <stem>.labels.u32 and the sidecar. Features are
/// narrowed to f32.
void write_tensor(const std::filesystem::path& sidecar, const LabeledDataset& ds);

/// Dispatches on extension: .csv or .json (tensor sidecar).
[[nodiscard]] LabeledDataset read_dataset(const std::filesystem::path& path, const CsvOptions& options = {});
void write_dataset(const std::filesystem::path& path, const LabeledDataset& ds, std::string_view label_column = "label");

[[nodiscard]] std::string read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

[[nodiscard]] nlohmann::json read_json(const std::filesystem::path& path);

/// Pretty-printed JSON with a trailing newline.
[[nodiscard]] std::string dump_json(const nlohmann::json& j);

} // namespace mscrub
