#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscrub/probes.hpp"

namespace mscrub {

/// Strictly increasing training-prefix sizes.
struct PrefixSchedule {
    std::vector<Index> sizes;
};

/// first, ⌈first·ratio⌉, ⌈first·ratio²⌉, … capped at n_train (which is always
/// the final size), deduplicated.
[[nodiscard]] PrefixSchedule make_schedule(Index n_train, Index first = 64, double ratio = 2.0);

struct MdlCurve {
    PrefixSchedule schedule;
    std::vector<double> val_loss; // nats, model trained on the first sizes[i] stream rows
    std::vector<bool> converged;
    double trivial_loss = 0.0; // H(λ) of the training stream
    double codelength_nats = 0.0;
    double codelength_bits = 0.0;
    Index n_stream = 0;
    int degree = 0;
    std::uint64_t seed = 0;
};

struct MdlOptions {
    int degree = 2;
    Index first = 64;
    double ratio = 2.0;
    std::optional<PrefixSchedule> schedule; // overrides first/ratio
    double validation_fraction = 0.2;
    ProbeConfig probe;
};

/// Block (online) code length: the first block is coded under the label
/// prior, block j under the probe trained on all earlier blocks and scored on
/// the validation fold.
[[nodiscard]] double online_codelength(const PrefixSchedule& schedule, std::span<const double> val_loss,
                                       double trivial);

/// Splits ds by `seed` into a training stream and a fixed validation fold,
/// then trains a fresh probe on every prefix of the stream.
[[nodiscard]] MdlCurve prequential_mdl(const LabeledDataset& ds, std::uint64_t seed, const MdlOptions& options = {});

/// Same, on an explicit training stream (coded in row order) and validation
/// fold; `seed` is only recorded.
[[nodiscard]] MdlCurve prequential_mdl(const LabeledDataset& stream, const LabeledDataset& validation,
                                       std::uint64_t seed, const MdlOptions& options = {});

struct MdlDeltaRow {
    std::string name;
    double codelength_mean = 0.0;
    double codelength_std = 0.0;
    double diff_mean = 0.0; // eraser − control, nats
    double diff_std = 0.0;
    double ratio_mean = 0.0; // eraser / control
    double ratio_std = 0.0;
};

struct MdlDeltaReport {
    double control_mean = 0.0;
    double control_std = 0.0;
    std::vector<MdlDeltaRow> rows;

    [[nodiscard]] std::string to_text() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Mean ± sample std over seeds of each eraser's codelength change relative to
/// the control. Curves are paired by position; seeds and schedules must match.
[[nodiscard]] MdlDeltaReport mdl_delta_report(const std::vector<MdlCurve>& control,
                                              const std::vector<std::pair<std::string, std::vector<MdlCurve>>>& erased);

/// Mean and sample standard deviation (0 for fewer than two values).
[[nodiscard]] std::pair<double, double> mean_std(std::span<const double> values);

[[nodiscard]] nlohmann::json to_json(const MdlCurve& c);
[[nodiscard]] MdlCurve mdl_curve_from_json(const nlohmann::json& j);
[[nodiscard]] std::string curve_csv(const MdlCurve& c);

} // namespace mscrub
