#include "mscrub/mdl.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "mscrub/format.hpp"
#include "mscrub/rng.hpp"

namespace mscrub {

PrefixSchedule make_schedule(Index n_train, Index first, double ratio) {
    require(first >= 1, ErrorCode::InvalidInput, "schedule: first block must be >= 1");
    require(ratio > 1.0 && std::isfinite(ratio), ErrorCode::InvalidInput, "schedule: ratio must be > 1");
    require(n_train >= 1, ErrorCode::InvalidInput, "schedule: empty training stream");
    PrefixSchedule s;
    double size = static_cast<double>(first);
    while (true) {
        const Index next = std::min<Index>(n_train, static_cast<Index>(std::ceil(size)));
        if (s.sizes.empty() || next > s.sizes.back()) {
            s.sizes.push_back(next);
        }
        if (next >= n_train) {
            break;
        }
        size *= ratio;
    }
    return s;
}

double online_codelength(const PrefixSchedule& schedule, std::span<const double> val_loss, double trivial) {
    require(!schedule.sizes.empty(), ErrorCode::InvalidInput, "empty schedule");
    require(val_loss.size() == schedule.sizes.size(), ErrorCode::ShapeMismatch, "one loss per schedule size");
    double total = static_cast<double>(schedule.sizes[0]) * trivial;
    for (std::size_t j = 1; j < schedule.sizes.size(); ++j) {
        total += static_cast<double>(schedule.sizes[j] - schedule.sizes[j - 1]) * val_loss[j - 1];
    }
    return total;
}

MdlCurve prequential_mdl(const LabeledDataset& ds, std::uint64_t seed, const MdlOptions& options) {
    validate(ds);
    require(!ds.labels.empty(), ErrorCode::InvalidInput, "MDL requires labels");
    const auto [stream, validation] = split_dataset(ds, options.validation_fraction, seed);
    return prequential_mdl(stream, validation, seed, options);
}

MdlCurve prequential_mdl(const LabeledDataset& stream, const LabeledDataset& validation, std::uint64_t seed,
                         const MdlOptions& options) {
    require(!stream.labels.empty() && !validation.labels.empty(), ErrorCode::InvalidInput, "MDL requires labels");
    require(stream.num_classes == validation.num_classes && stream.dim() == validation.dim(),
            ErrorCode::ShapeMismatch, "stream and validation fold disagree in shape");
    const auto& ds = stream;
    MdlCurve curve;
    curve.seed = seed;
    curve.degree = options.degree;
    curve.schedule = options.schedule ? *options.schedule : make_schedule(stream.size(), options.first, options.ratio);
    const auto& sizes = curve.schedule.sizes;
    require(!sizes.empty(), ErrorCode::InvalidInput, "empty schedule");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        require(sizes[i] >= 1 && sizes[i] <= stream.size() && (i == 0 || sizes[i] > sizes[i - 1]),
                ErrorCode::InvalidInput, "schedule must be strictly increasing within the training stream");
    }
    require(sizes.front() >= 10 * ds.num_classes, ErrorCode::InvalidInput,
            "first prefix " + std::to_string(sizes.front()) + " is below 10 samples per class");

    curve.n_stream = sizes.back();
    std::vector<std::size_t> prefix_rows(static_cast<std::size_t>(curve.n_stream));
    for (std::size_t i = 0; i < prefix_rows.size(); ++i) {
        prefix_rows[i] = i;
    }
    const auto coded = select_rows(stream, prefix_rows);
    curve.trivial_loss = trivial_loss(label_priors(coded));

    for (const Index size : sizes) {
        const auto prefix = select_rows(stream, std::span<const std::size_t>(prefix_rows).first(static_cast<std::size_t>(size)));
        const auto probe = train_probe(prefix, options.degree, options.probe);
        curve.val_loss.push_back(eval_probe(probe, validation));
        curve.converged.push_back(probe.converged);
    }
    curve.codelength_nats = online_codelength(curve.schedule, curve.val_loss, curve.trivial_loss);
    curve.codelength_bits = curve.codelength_nats / std::numbers::ln2;
    return curve;
}

std::pair<double, double> mean_std(std::span<const double> values) {
    if (values.empty()) {
        return {0.0, 0.0};
    }
    double mean = 0.0;
    for (const double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    if (values.size() < 2) {
        return {mean, 0.0};
    }
    double ss = 0.0;
    for (const double v : values) {
        ss += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

MdlDeltaReport mdl_delta_report(const std::vector<MdlCurve>& control,
                                const std::vector<std::pair<std::string, std::vector<MdlCurve>>>& erased) {
    require(!control.empty(), ErrorCode::InvalidInput, "mdl report: no control curves");
    MdlDeltaReport report;
    std::vector<double> base;
    for (const auto& c : control) {
        base.push_back(c.codelength_nats);
    }
    std::tie(report.control_mean, report.control_std) = mean_std(base);

    for (const auto& [name, curves] : erased) {
        require(curves.size() == control.size(), ErrorCode::ShapeMismatch,
                "mdl report: '" + name + "' has " + std::to_string(curves.size()) + " seeds, control has " +
                    std::to_string(control.size()));
        std::vector<double> lengths, diffs, ratios;
        for (std::size_t i = 0; i < curves.size(); ++i) {
            require(curves[i].seed == control[i].seed, ErrorCode::ShapeMismatch,
                    "mdl report: seed mismatch for '" + name + "'");
            require(curves[i].schedule.sizes == control[i].schedule.sizes, ErrorCode::ShapeMismatch,
                    "mdl report: schedule mismatch for '" + name + "'");
            lengths.push_back(curves[i].codelength_nats);
            diffs.push_back(curves[i].codelength_nats - control[i].codelength_nats);
            ratios.push_back(curves[i].codelength_nats / control[i].codelength_nats);
        }
        MdlDeltaRow row;
        row.name = name;
        std::tie(row.codelength_mean, row.codelength_std) = mean_std(lengths);
        std::tie(row.diff_mean, row.diff_std) = mean_std(diffs);
        std::tie(row.ratio_mean, row.ratio_std) = mean_std(ratios);
        report.rows.push_back(row);
    }
    return report;
}

std::string MdlDeltaReport::to_text() const {
    std::ostringstream os;
    os << "control codelength (nats): " << format_double(control_mean) << " +/- " << format_double(control_std) << "\n";
    os << "eraser\tcodelength_nats\tdelta_nats\tratio\n";
    for (const auto& r : rows) {
        os << r.name << "\t" << format_double(r.codelength_mean) << " +/- " << format_double(r.codelength_std) << "\t"
           << format_double(r.diff_mean) << " +/- " << format_double(r.diff_std) << "\t" << format_double(r.ratio_mean)
           << " +/- " << format_double(r.ratio_std) << "\n";
    }
    return os.str();
}

nlohmann::json MdlDeltaReport::to_json() const {
    auto rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_json.push_back({{"name", r.name},
                             {"codelength_mean", r.codelength_mean},
                             {"codelength_std", r.codelength_std},
                             {"diff_mean", r.diff_mean},
                             {"diff_std", r.diff_std},
                             {"ratio_mean", r.ratio_mean},
                             {"ratio_std", r.ratio_std}});
    }
    return nlohmann::json{{"control_mean", control_mean}, {"control_std", control_std}, {"erasers", std::move(rows_json)}};
}

nlohmann::json to_json(const MdlCurve& c) {
    return nlohmann::json{{"seed", c.seed},
                          {"degree", c.degree},
                          {"sizes", c.schedule.sizes},
                          {"val_loss_nats", c.val_loss},
                          {"converged", c.converged},
                          {"trivial_loss", c.trivial_loss},
                          {"n_stream", c.n_stream},
                          {"codelength_nats", c.codelength_nats},
                          {"codelength_bits", c.codelength_bits}};
}

MdlCurve mdl_curve_from_json(const nlohmann::json& j) {
    try {
        MdlCurve c;
        c.seed = j.at("seed").get<std::uint64_t>();
        c.degree = j.at("degree").get<int>();
        c.schedule.sizes = j.at("sizes").get<std::vector<Index>>();
        c.val_loss = j.at("val_loss_nats").get<std::vector<double>>();
        c.converged = j.at("converged").get<std::vector<bool>>();
        c.trivial_loss = j.at("trivial_loss").get<double>();
        c.n_stream = j.at("n_stream").get<Index>();
        c.codelength_nats = j.at("codelength_nats").get<double>();
        c.codelength_bits = j.at("codelength_bits").get<double>();
        require(c.val_loss.size() == c.schedule.sizes.size() && c.converged.size() == c.val_loss.size(),
                ErrorCode::MalformedFile, "curve arrays disagree in length");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("mdl curve: ") + e.what());
    }
}

std::string curve_csv(const MdlCurve& c) {
    std::string out = "size,val_loss_nats,converged\n";
    for (std::size_t i = 0; i < c.schedule.sizes.size(); ++i) {
        out += std::to_string(c.schedule.sizes[i]) + "," + format_double(c.val_loss[i]) + "," +
               (c.converged[i] ? "1" : "0") + "\n";
    }
    return out;
}

} // namespace mscrub
