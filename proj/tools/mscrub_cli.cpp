#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscrub/datagen.hpp"
#include "mscrub/erasers.hpp"
#include "mscrub/format.hpp"
#include "mscrub/gradient_erase.hpp"
#include "mscrub/io.hpp"
#include "mscrub/mdl.hpp"
#include "mscrub/probes.hpp"
#include "mscrub/serialize.hpp"
#include "mscrub/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mscrub;

namespace {

enum Exit : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4, kInternal = 5 };

struct NonConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidInput:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::Unsupported:
    case ErrorCode::Io: return kUsage;
    case ErrorCode::DataFormat:
    case ErrorCode::MalformedFile:
    case ErrorCode::UnknownVersion:
    case ErrorCode::DegenerateClass: return kData;
    case ErrorCode::NotPSD: return kNumeric;
    }
    return kInternal;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

/// Collects outputs so nothing is written until the whole command succeeded.
class Outputs {
public:
    void add(const fs::path& path, std::string bytes) { files_.emplace_back(path, std::move(bytes)); }
    void add_dataset(const fs::path& path, const LabeledDataset& ds, const std::string& label_column) {
        datasets_.push_back({path, ds, label_column});
    }

    void commit(const std::string& command, const json& config, const std::vector<fs::path>& inputs) const {
        json manifest;
        manifest["tool"] = "mscrub";
        manifest["version"] = kVersion;
        manifest["eraser_format_version"] = kEraserFormatVersion;
        manifest["command"] = command;
        manifest["config"] = config;
        auto in = json::array();
        for (const auto& p : inputs) {
            in.push_back({{"path", p.string()}, {"fnv1a64", hex64(fnv1a64(read_file(p)))}});
        }
        manifest["inputs"] = std::move(in);
        auto out = json::array();
        for (const auto& d : datasets_) {
            out.push_back(d.path.string());
        }
        for (const auto& [p, bytes] : files_) {
            out.push_back(p.string());
        }
        manifest["outputs"] = std::move(out);

        for (const auto& d : datasets_) {
            write_dataset(d.path, d.ds, d.label_column);
        }
        for (const auto& [p, bytes] : files_) {
            write_file_atomic(p, bytes);
        }
        write_file_atomic(primary() + ".manifest.json", dump_json(manifest));
    }

private:
    struct PendingDataset {
        fs::path path;
        LabeledDataset ds;
        std::string label_column;
    };

    [[nodiscard]] std::string primary() const {
        if (!datasets_.empty()) {
            return datasets_.front().path.string();
        }
        return files_.front().first.string();
    }

    std::vector<PendingDataset> datasets_;
    std::vector<std::pair<fs::path, std::string>> files_;
};

struct Common {
    std::string label_column = "label";
    std::optional<int> threads;
    std::string bounds;

    [[nodiscard]] int resolved_threads() const {
        if (threads) {
            return *threads;
        }
        if (const char* env = std::getenv("MSCRUB_THREADS")) {
            char* end = nullptr;
            const long v = std::strtol(env, &end, 10);
            require(end != env && *end == '\0' && v >= 1 && v <= 1024, ErrorCode::InvalidInput,
                    "MSCRUB_THREADS must be an integer in 1..1024");
            return static_cast<int>(v);
        }
        return 1;
    }

    /// "lo,hi" applied to every feature.
    [[nodiscard]] std::optional<std::pair<double, double>> parsed_bounds() const {
        if (bounds.empty()) {
            return std::nullopt;
        }
        const auto comma = bounds.find(',');
        require(comma != std::string::npos, ErrorCode::InvalidInput, "--bounds expects LO,HI");
        char* end = nullptr;
        const std::string a = bounds.substr(0, comma), b = bounds.substr(comma + 1);
        const double lo = std::strtod(a.c_str(), &end);
        require(!a.empty() && *end == '\0', ErrorCode::InvalidInput, "--bounds: bad LO");
        const double hi = std::strtod(b.c_str(), &end);
        require(!b.empty() && *end == '\0', ErrorCode::InvalidInput, "--bounds: bad HI");
        require(std::isfinite(lo) && std::isfinite(hi) && lo < hi, ErrorCode::InvalidInput,
                "--bounds needs finite LO < HI");
        return std::pair{lo, hi};
    }

    [[nodiscard]] LabeledDataset load(const fs::path& path) const {
        auto ds = read_dataset(path, CsvOptions{label_column, 0});
        if (const auto b = parsed_bounds()) {
            ds.bounds = Bounds{VectorXd::Constant(ds.dim(), b->first), VectorXd::Constant(ds.dim(), b->second)};
        }
        validate(ds);
        return ds;
    }

    void describe(json& config) const {
        config["label_column"] = label_column;
        config["threads"] = resolved_threads();
        config["bounds"] = bounds.empty() ? json(nullptr) : json(bounds);
    }
};

CovarianceWeighting parse_weighting(const std::string& s) {
    return s == "uniform" ? CovarianceWeighting::Uniform : CovarianceWeighting::Prior;
}

std::string gap_text(const MomentGapReport& r) {
    std::ostringstream out;
    for (std::size_t c = 0; c < r.mean_gaps.size(); ++c) {
        out << "class " << c << ": mean_gap=" << fixed(r.mean_gaps[c])
            << " cov_gap_spectral=" << fixed(r.covariance_gaps_spectral[c])
            << " cov_gap_frobenius=" << fixed(r.covariance_gaps_frobenius[c]) << "\n";
    }
    out << "max: mean_gap=" << fixed(r.max_mean_gap) << " cov_gap_spectral=" << fixed(r.max_covariance_gap_spectral)
        << " cov_gap_frobenius=" << fixed(r.max_covariance_gap_frobenius) << "\n";
    return out.str();
}

// ---------------------------------------------------------------- stats

struct StatsArgs {
    std::string input, output;
    double shrinkage = kDefaultShrinkage;
    std::string weighting = "prior";
};

void run_stats(const StatsArgs& a, const Common& common) {
    const auto ds = common.load(a.input);
    const auto m = fit_moments(ds, a.shrinkage, common.resolved_threads());
    const auto gaps = moment_gap_report(m, parse_weighting(a.weighting));
    const json doc{{"moments", to_json(m)}, {"gaps", to_json(gaps)}};
    const std::string text = gap_text(gaps);

    Outputs out;
    out.add(a.output, dump_json(doc));
    out.add(a.output + ".gaps.txt", text);
    json config{{"input", a.input}, {"output", a.output}, {"shrinkage", a.shrinkage}, {"weighting", a.weighting}};
    common.describe(config);
    out.commit("stats", config, {a.input});
    std::cout << text;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
    std::string input, output, method;
    double shrinkage = kDefaultShrinkage;
    std::optional<double> tol;
    int max_iter = 500;
    Index rank_budget = 15;
    std::optional<Index> rank;
    std::uint64_t seed = 0;
    double alpha = 1.0, beta = 1.0;
    std::optional<double> gamma;
    std::string weighting = "prior";
    bool allow_nonconverged = false;
};

double default_tol(const std::string& method) {
    if (method == "qleace") {
        return 1e-9;
    }
    if (method == "alf-qleace") {
        return 1e-10;
    }
    if (method == "grad") {
        return 1e-10;
    }
    return 0.0;
}

void check_converged(bool converged, bool allowed, const std::string& what) {
    if (converged) {
        return;
    }
    if (allowed) {
        std::cerr << "warning: " << what << " did not converge (--allow-nonconverged)\n";
        return;
    }
    throw NonConvergence(what + " did not converge; rerun with a larger --max-iter or --allow-nonconverged");
}

void run_fit(const FitArgs& a, const Common& common) {
    const double tol = a.tol.value_or(default_tol(a.method));
    const auto ds = common.load(a.input);
    const Index d = ds.dim();
    require(a.method != "alf-qleace" || a.rank_budget <= d, ErrorCode::InvalidInput,
            "--rank-budget " + std::to_string(a.rank_budget) + " exceeds the dimension " + std::to_string(d));

    json config{{"input", a.input},         {"output", a.output},       {"method", a.method},
                {"shrinkage", a.shrinkage}, {"tol", tol},               {"max_iter", a.max_iter},
                {"weighting", a.weighting}, {"allow_nonconverged", a.allow_nonconverged}};
    common.describe(config);
    Outputs out;

    if (a.method == "grad") {
        require(ds.bounds.has_value(), ErrorCode::InvalidInput, "grad requires --bounds or bounds in the sidecar");
        GradientEraseOptions opt;
        opt.alpha = a.alpha;
        opt.beta = a.beta;
        opt.gamma = a.gamma;
        opt.optimizer.max_iterations = a.max_iter;
        opt.optimizer.gradient_tolerance = tol;
        const auto r = gradient_erase(ds, opt);
        check_converged(r.converged, a.allow_nonconverged, "gradient erasure");
        std::string traj = "iteration,loss\n";
        for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
            traj += std::to_string(i) + "," + format_double(r.trajectory[i]) + "\n";
        }
        config["alpha"] = r.alpha;
        config["beta"] = r.beta;
        config["gamma"] = r.gamma;
        out.add_dataset(a.output, r.dataset, common.label_column);
        out.add(a.output + ".trajectory.csv", traj);
        out.commit("fit", config, {a.input});
        std::cout << "iterations: " << r.iterations << "\n"
                  << "mean term: " << fixed(r.initial.mean, 8) << " -> " << fixed(r.final_terms.mean, 8) << "\n"
                  << "covariance term: " << fixed(r.initial.covariance, 8) << " -> "
                  << fixed(r.final_terms.covariance, 8) << "\n"
                  << "anchor term: " << fixed(r.final_terms.anchor, 8) << "\n";
        return;
    }

    Eraser eraser;
    if (a.method == "randproj") {
        const Index rank = a.rank.value_or(std::max<Index>(d - a.rank_budget, 0));
        require(rank >= 0 && rank <= d, ErrorCode::InvalidInput, "--rank outside 0..d");
        config["rank"] = rank;
        config["seed"] = a.seed;
        eraser = fit_random_projection(d, rank, a.seed);
    } else {
        const auto m = fit_moments(ds, a.shrinkage, common.resolved_threads());
        if (a.method == "leace") {
            eraser = fit_leace(m);
        } else if (a.method == "qleace") {
            auto q = fit_qleace(m, tol, a.max_iter);
            check_converged(q.metadata.converged, a.allow_nonconverged,
                            "barycenter iteration (residual " + fixed(q.metadata.residual, 12) + ")");
            eraser = std::move(q);
        } else {
            // LEACE first, then ALF-QLEACE on the LEACE'd moments.
            const auto leace = fit_leace(m);
            const auto post = transform_moments(m, leace.projection, leace.bias);
            const auto alf = fit_alf_qleace(post, AlfOptions{a.rank_budget, tol, parse_weighting(a.weighting)});
            auto composed = compose(alf, leace, EraserMethod::LeaceAlfQleace);
            config["rank_budget"] = a.rank_budget;
            eraser = std::move(composed);
        }
    }
    out.add(a.output, serialize_eraser(eraser));
    out.commit("fit", config, {a.input});
    std::cout << "wrote " << a.output << " (" << a.method << ", d=" << d << ")\n";
}

// ---------------------------------------------------------------- apply

struct ApplyArgs {
    std::string eraser, input, output;
    bool clip = false;
};

void run_apply(const ApplyArgs& a, const Common& common) {
    const auto eraser = deserialize_eraser(read_file(a.eraser));
    const auto ds = common.load(a.input);
    auto erased = apply_eraser(eraser, ds);
    if (a.clip) {
        require(ds.bounds.has_value(), ErrorCode::InvalidInput, "--clip needs bounds");
        clip_to_bounds(erased, *ds.bounds);
        erased.bounds = ds.bounds;
    }
    json config{{"eraser", a.eraser}, {"input", a.input}, {"output", a.output}, {"clip", a.clip}};
    common.describe(config);
    Outputs out;
    out.add_dataset(a.output, erased, common.label_column);
    out.commit("apply", config, {a.eraser, a.input});
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
    std::string input, output;
    std::vector<int> degrees{1, 2};
    double tol = 0.02;
    std::uint64_t seed = 0;
};

void run_verify(const VerifyArgs& a, const Common& common) {
    const auto ds = common.load(a.input);
    const auto report = guardedness_report(ds, a.degrees, a.seed, a.tol);
    std::ostringstream text;
    text << "trivial loss: " << fixed(report.trivial_loss) << " nats\n";
    for (const auto& v : report.degrees) {
        text << "degree " << v.degree << ": held-out loss " << fixed(v.heldout_loss) << ", margin "
             << fixed(v.margin) << (v.converged ? "" : " (probe not converged)") << "\n";
    }
    for (std::size_t i = 0; i < report.degrees.size(); ++i) {
        text << (i ? ", " : "") << "guarded@" << report.degrees[i].degree << ": "
             << (report.degrees[i].guarded ? "yes" : "no");
    }
    text << "\n";
    if (!a.output.empty()) {
        json config{{"input", a.input}, {"output", a.output}, {"degrees", a.degrees}, {"tol", a.tol}, {"seed", a.seed}};
        common.describe(config);
        Outputs out;
        out.add(a.output, dump_json(to_json(report)));
        out.commit("verify", config, {a.input});
    }
    std::cout << text.str();
}

// ---------------------------------------------------------------- mdl

struct MdlArgs {
    std::string input, output;
    int degree = 2;
    Index first = 64;
    double ratio = 2.0;
    std::vector<Index> schedule;
    std::vector<std::uint64_t> seeds;
};

void run_mdl(const MdlArgs& a, const Common& common) {
    const auto ds = common.load(a.input);
    MdlOptions opt;
    opt.degree = a.degree;
    opt.first = a.first;
    opt.ratio = a.ratio;
    if (!a.schedule.empty()) {
        opt.schedule = PrefixSchedule{a.schedule};
    }
    const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{0} : a.seeds;

    auto curves = json::array();
    std::vector<double> lengths;
    std::vector<std::string> csvs;
    for (const auto seed : seeds) {
        const auto c = prequential_mdl(ds, seed, opt);
        curves.push_back(to_json(c));
        lengths.push_back(c.codelength_nats);
        csvs.push_back(curve_csv(c));
    }
    const auto [mean, sd] = mean_std(lengths);
    const json doc{{"degree", a.degree},      {"seeds", seeds},        {"curves", curves},
                   {"codelength_mean", mean}, {"codelength_std", sd}};
    json config{{"input", a.input}, {"output", a.output},     {"degree", a.degree}, {"first", a.first},
                {"ratio", a.ratio}, {"schedule", a.schedule}, {"seeds", seeds}};
    common.describe(config);
    Outputs out;
    out.add(a.output, dump_json(doc));
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        out.add(a.output + ".seed" + std::to_string(seeds[i]) + ".csv", csvs[i]);
    }
    out.commit("mdl", config, {a.input});
    std::cout << "codelength: " << fixed(mean, 3) << " ± " << fixed(sd, 3) << " nats over " << seeds.size()
              << " seed(s)\n";
}

// ---------------------------------------------------------------- compare

struct CompareArgs {
    std::string control, output;
    std::vector<std::string> erased; // name=path
};

std::vector<MdlCurve> load_curves(const fs::path& path) {
    const auto doc = read_json(path);
    require(doc.is_object() && doc.contains("curves") && doc.at("curves").is_array(), ErrorCode::MalformedFile,
            path.string() + ": not an mdl result");
    std::vector<MdlCurve> out;
    for (const auto& c : doc.at("curves")) {
        out.push_back(mdl_curve_from_json(c));
    }
    return out;
}

void run_compare(const CompareArgs& a, const Common& common) {
    std::vector<std::pair<std::string, std::vector<MdlCurve>>> erased;
    std::vector<fs::path> inputs{a.control};
    for (const auto& spec : a.erased) {
        const auto eq = spec.find('=');
        require(eq != std::string::npos && eq > 0 && eq + 1 < spec.size(), ErrorCode::InvalidInput,
                "--erased expects NAME=PATH");
        inputs.emplace_back(spec.substr(eq + 1));
        erased.emplace_back(spec.substr(0, eq), load_curves(inputs.back()));
    }
    const auto report = mdl_delta_report(load_curves(a.control), erased);
    json config{{"control", a.control}, {"erased", a.erased}, {"output", a.output}};
    common.describe(config);
    Outputs out;
    out.add(a.output, dump_json(report.to_json()));
    out.commit("compare", config, inputs);
    std::cout << report.to_text();
}

// ---------------------------------------------------------------- synth / normalize

struct SynthArgs {
    std::string spec, output;
};

void run_synth(const SynthArgs& a, const Common& common) {
    const auto ds = generate_from_json(read_json(a.spec));
    json config{{"spec", a.spec}, {"output", a.output}};
    common.describe(config);
    Outputs out;
    out.add_dataset(a.output, ds, common.label_column);
    out.commit("synth", config, {a.spec});
}

struct NormalizeArgs {
    std::string input, output;
};

void run_normalize(const NormalizeArgs& a, const Common& common) {
    const auto ds = common.load(a.input);
    const auto [normalized, record] = zscore_normalize(ds);
    json config{{"input", a.input}, {"output", a.output}};
    common.describe(config);
    Outputs out;
    out.add_dataset(a.output, normalized, common.label_column);
    out.add(a.output + ".zscore.json", dump_json(to_json(record)));
    out.commit("normalize", config, {a.input});
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mscrub: moment-based concept erasure and guardedness checks"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--label-column", common.label_column, "CSV label column (empty: unlabeled)");
        sub->add_option("--threads", common.threads, "worker threads (default: MSCRUB_THREADS or 1)")
            ->check(CLI::Range(1, 1024));
        sub->add_option("--bounds", common.bounds, "LO,HI feature bounds for every column");
    };
    const auto weighting_check = CLI::IsMember({"prior", "uniform"});

    StatsArgs stats;
    auto* s = app.add_subcommand("stats", "class moments and gap report");
    s->add_option("input", stats.input, "dataset (.csv or tensor .json)")->required();
    s->add_option("-o,--output", stats.output, "moments JSON")->required();
    s->add_option("--shrinkage", stats.shrinkage)->check(CLI::NonNegativeNumber);
    s->add_option("--weighting", stats.weighting)->check(weighting_check);
    add_common(s);

    FitArgs fit;
    auto* f = app.add_subcommand("fit", "fit an eraser (grad: edit the dataset)");
    f->add_option("input", fit.input)->required();
    f->add_option("-o,--output", fit.output, "eraser JSON, or edited dataset for grad")->required();
    f->add_option("--method", fit.method)
        ->required()
        ->check(CLI::IsMember({"leace", "qleace", "alf-qleace", "grad", "randproj"}));
    f->add_option("--shrinkage", fit.shrinkage)->check(CLI::NonNegativeNumber);
    f->add_option("--tol", fit.tol)->check(CLI::NonNegativeNumber);
    f->add_option("--max-iter", fit.max_iter)->check(CLI::PositiveNumber);
    f->add_option("--rank-budget", fit.rank_budget, "ALF-QLEACE deflation budget")->check(CLI::NonNegativeNumber);
    f->add_option("--rank", fit.rank, "randproj subspace rank (default d - rank budget)")
        ->check(CLI::NonNegativeNumber);
    f->add_option("--seed", fit.seed);
    f->add_option("--alpha", fit.alpha)->check(CLI::NonNegativeNumber);
    f->add_option("--beta", fit.beta)->check(CLI::NonNegativeNumber);
    f->add_option("--gamma", fit.gamma)->check(CLI::NonNegativeNumber);
    f->add_option("--weighting", fit.weighting)->check(weighting_check);
    f->add_flag("--allow-nonconverged", fit.allow_nonconverged);
    add_common(f);

    ApplyArgs apply;
    auto* ap = app.add_subcommand("apply", "apply an eraser to a dataset");
    ap->add_option("eraser", apply.eraser)->required();
    ap->add_option("input", apply.input)->required();
    ap->add_option("-o,--output", apply.output)->required();
    ap->add_flag("--clip", apply.clip, "clip erased values into the bounds");
    add_common(ap);

    VerifyArgs verify;
    auto* v = app.add_subcommand("verify", "polynomial-probe guardedness check");
    v->add_option("input", verify.input)->required();
    v->add_option("-o,--output", verify.output, "optional report JSON");
    v->add_option("--degrees", verify.degrees)->delimiter(',')->check(CLI::Range(1, kMaxProbeDegree));
    v->add_option("--tol", verify.tol)->check(CLI::NonNegativeNumber);
    v->add_option("--seed", verify.seed, "train/held-out split seed");
    add_common(v);

    MdlArgs mdl;
    auto* md = app.add_subcommand("mdl", "prequential MDL curve(s)");
    md->add_option("input", mdl.input)->required();
    md->add_option("-o,--output", mdl.output)->required();
    md->add_option("--degree", mdl.degree)->check(CLI::Range(1, kMaxProbeDegree));
    md->add_option("--first", mdl.first)->check(CLI::PositiveNumber);
    md->add_option("--ratio", mdl.ratio)->check(CLI::Range(1.0 + 1e-12, 1e12));
    md->add_option("--schedule", mdl.schedule, "explicit prefix sizes")->delimiter(',')->check(CLI::PositiveNumber);
    auto* seeds_opt = md->add_option("--seeds", mdl.seeds)->delimiter(',');
    md->add_option("--seed", mdl.seeds, "single seed")->expected(1)->excludes(seeds_opt);
    add_common(md);

    CompareArgs compare;
    auto* c = app.add_subcommand("compare", "MDL delta report against a control");
    c->add_option("--control", compare.control, "mdl result of the unerased data")->required();
    c->add_option("--erased", compare.erased, "NAME=PATH of an mdl result")->required();
    c->add_option("-o,--output", compare.output)->required();
    add_common(c);

    SynthArgs synth;
    auto* sy = app.add_subcommand("synth", "generate a dataset from a JSON spec");
    sy->add_option("spec", synth.spec)->required();
    sy->add_option("-o,--output", synth.output)->required();
    add_common(sy);

    NormalizeArgs normalize;
    auto* n = app.add_subcommand("normalize", "z-score every feature");
    n->add_option("input", normalize.input)->required();
    n->add_option("-o,--output", normalize.output)->required();
    add_common(n);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        // Resolve environment-derived and string flags before any work.
        (void)common.resolved_threads();
        (void)common.parsed_bounds();
        if (*s) {
            run_stats(stats, common);
        } else if (*f) {
            run_fit(fit, common);
        } else if (*ap) {
            run_apply(apply, common);
        } else if (*v) {
            run_verify(verify, common);
        } else if (*md) {
            run_mdl(mdl, common);
        } else if (*c) {
            run_compare(compare, common);
        } else if (*sy) {
            run_synth(synth, common);
        } else if (*n) {
            run_normalize(normalize, common);
        }
    } catch (const NonConvergence& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kOk;
}
