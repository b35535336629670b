#include "mscrub/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mscrub/format.hpp"

namespace mscrub {

namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

bool parse_number(std::string_view s, double& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

[[noreturn]] void bad_row(std::size_t line, const std::string& what) {
    throw Error(ErrorCode::DataFormat, "line " + std::to_string(line) + ": " + what);
}

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

fs::path resolve(const fs::path& base, const std::string& rel) {
    const fs::path p(rel);
    return p.is_absolute() ? p : base.parent_path() / p;
}

} // namespace

LabeledDataset parse_csv(std::string_view text, const CsvOptions& options) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    auto next_line = [&](std::string_view& line) {
        while (pos < text.size()) {
            const auto end = text.find('\n', pos);
            line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
            pos = end == std::string_view::npos ? text.size() : end + 1;
            ++line_no;
            if (!trim(line).empty()) {
                return true;
            }
        }
        return false;
    };

    std::string_view header;
    if (!next_line(header)) {
        throw Error(ErrorCode::DataFormat, "CSV is empty");
    }
    const auto names = split_fields(header);
    std::ptrdiff_t label_col = -1;
    if (!options.label_column.empty()) {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (trim(names[i]) == options.label_column) {
                label_col = static_cast<std::ptrdiff_t>(i);
            }
        }
        if (label_col < 0) {
            throw Error(ErrorCode::DataFormat, "line 1: no column named '" + options.label_column + "'");
        }
    }
    const auto width = names.size();
    const Index d = static_cast<Index>(width) - (label_col >= 0 ? 1 : 0);
    require(d >= 1, ErrorCode::DataFormat, "CSV has no feature columns");

    std::vector<double> values;
    std::vector<std::uint32_t> labels;
    std::string_view line;
    while (next_line(line)) {
        const auto fields = split_fields(line);
        if (fields.size() != width) {
            bad_row(line_no, "expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()));
        }
        for (std::size_t i = 0; i < width; ++i) {
            if (static_cast<std::ptrdiff_t>(i) == label_col) {
                const auto f = trim(fields[i]);
                std::uint32_t z = 0;
                const auto res = std::from_chars(f.data(), f.data() + f.size(), z);
                if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size()) {
                    bad_row(line_no, "label '" + std::string(f) + "' is not a nonnegative integer");
                }
                labels.push_back(z);
                continue;
            }
            double v = 0.0;
            if (!parse_number(fields[i], v) || !std::isfinite(v)) {
                bad_row(line_no, "field " + std::to_string(i + 1) + " ('" + std::string(trim(fields[i])) +
                                     "') is not a finite number");
            }
            values.push_back(v);
        }
    }

    LabeledDataset ds;
    const Index n = static_cast<Index>(values.size()) / d;
    ds.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), n, d);
    ds.labels = std::move(labels);
    Index k = options.num_classes;
    if (k == 0) {
        for (const auto z : ds.labels) {
            k = std::max<Index>(k, static_cast<Index>(z) + 1);
        }
    }
    ds.num_classes = k;
    for (const auto z : ds.labels) {
        require(static_cast<Index>(z) < k, ErrorCode::DataFormat,
                "label " + std::to_string(z) + " outside 0.." + std::to_string(k - 1));
    }
    return ds;
}

std::string to_csv(const LabeledDataset& ds, std::string_view label_column) {
    std::string out;
    for (Index j = 0; j < ds.dim(); ++j) {
        out += (j > 0 ? ",x" : "x") + std::to_string(j);
    }
    const bool labeled = !ds.labels.empty();
    if (labeled) {
        out += ",";
        out += label_column;
    }
    out += "\n";
    for (Index i = 0; i < ds.size(); ++i) {
        for (Index j = 0; j < ds.dim(); ++j) {
            if (j > 0) {
                out += ",";
            }
            out += format_double(ds.features(i, j));
        }
        if (labeled) {
            out += "," + std::to_string(ds.labels[static_cast<std::size_t>(i)]);
        }
        out += "\n";
    }
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorCode::Io, "cannot write '" + tmp.string() + "'");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            throw Error(ErrorCode::Io, "write failed for '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::Io, "cannot rename onto '" + path.string() + "'");
    }
}

LabeledDataset read_csv(const fs::path& path, const CsvOptions& options) {
    return parse_csv(read_file(path), options);
}

nlohmann::json read_json(const fs::path& path) {
    const auto text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what());
    }
}

std::string dump_json(const nlohmann::json& j) {
    return j.dump(2) + "\n";
}

LabeledDataset read_tensor(const fs::path& sidecar) {
    const auto meta = read_json(sidecar);
    LabeledDataset ds;
    try {
        const auto n = meta.at("n").get<Index>();
        const auto d = meta.at("d").get<Index>();
        const auto k = meta.value("k", Index{0});
        require(n >= 0 && d >= 1, ErrorCode::DataFormat, "sidecar: bad n or d");
        require(meta.value("dtype", std::string("f32")) == "f32", ErrorCode::DataFormat, "sidecar: dtype must be f32");
        fs::path feat_path = sidecar;
        feat_path.replace_extension(".f32");
        if (meta.contains("features")) {
            feat_path = resolve(sidecar, meta.at("features").get<std::string>());
        }
        const auto raw = read_file(feat_path);
        const auto expect = static_cast<std::size_t>(n * d) * sizeof(float);
        require(raw.size() == expect, ErrorCode::DataFormat,
                "tensor file has " + std::to_string(raw.size()) + " bytes, expected " + std::to_string(expect));
        std::vector<float> buf(static_cast<std::size_t>(n * d));
        std::memcpy(buf.data(), raw.data(), expect);
        ds.features = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(buf.data(), n, d)
                          .cast<double>();
        ds.num_classes = k;
        if (meta.contains("labels") && !meta.at("labels").is_null()) {
            const auto lraw = read_file(resolve(sidecar, meta.at("labels").get<std::string>()));
            require(lraw.size() == static_cast<std::size_t>(n) * sizeof(std::uint32_t), ErrorCode::DataFormat,
                    "label file size does not match n");
            ds.labels.resize(static_cast<std::size_t>(n));
            std::memcpy(ds.labels.data(), lraw.data(), lraw.size());
            for (const auto z : ds.labels) {
                require(static_cast<Index>(z) < k, ErrorCode::DataFormat,
                        "label " + std::to_string(z) + " outside 0.." + std::to_string(k - 1));
            }
        }
        if (meta.contains("bounds")) {
            const auto& b = meta.at("bounds");
            Bounds bounds{vector_from_json(b.at("lo")), vector_from_json(b.at("hi"))};
            require(bounds.lo.size() == d && bounds.hi.size() == d, ErrorCode::DataFormat, "bounds length differs from d");
            ds.bounds = std::move(bounds);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::DataFormat, "sidecar: " + std::string(e.what()));
    }
    return ds;
}

void write_tensor(const fs::path& sidecar, const LabeledDataset& ds) {
    fs::path feat_path = sidecar;
    feat_path.replace_extension(".f32");
    fs::path label_path = sidecar;
    label_path.replace_extension(".labels.u32");

    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = ds.features.cast<float>();
    write_file_atomic(feat_path, std::string_view(reinterpret_cast<const char*>(f.data()),
                                                  static_cast<std::size_t>(f.size()) * sizeof(float)));
    nlohmann::json meta{{"n", ds.size()}, {"d", ds.dim()}, {"k", ds.num_classes}, {"dtype", "f32"},
                        {"features", feat_path.filename().string()}};
    if (!ds.labels.empty()) {
        write_file_atomic(label_path, std::string_view(reinterpret_cast<const char*>(ds.labels.data()),
                                                       ds.labels.size() * sizeof(std::uint32_t)));
        meta["labels"] = label_path.filename().string();
    }
    if (ds.bounds) {
        meta["bounds"] = {{"lo", vector_to_json(ds.bounds->lo)}, {"hi", vector_to_json(ds.bounds->hi)}};
    }
    write_file_atomic(sidecar, dump_json(meta));
}

LabeledDataset read_dataset(const fs::path& path, const CsvOptions& options) {
    const auto ext = path.extension().string();
    if (ext == ".csv") {
        return read_csv(path, options);
    }
    if (ext == ".json") {
        return read_tensor(path);
    }
    throw Error(ErrorCode::InvalidInput, "unrecognized dataset extension '" + ext + "' (expected .csv or .json)");
}

void write_dataset(const fs::path& path, const LabeledDataset& ds, std::string_view label_column) {
    const auto ext = path.extension().string();
    if (ext == ".csv") {
        write_file_atomic(path, to_csv(ds, label_column));
        return;
    }
    if (ext == ".json") {
        write_tensor(path, ds);
        return;
    }
    throw Error(ErrorCode::InvalidInput, "unrecognized dataset extension '" + ext + "' (expected .csv or .json)");
}

} // namespace mscrub
