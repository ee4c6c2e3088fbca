#include "stids/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "stids/errors.hpp"
#include "stids/rng.hpp"

namespace stids {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

size_t Schema::feature_count() const { return feature_column_indices().size(); }

std::vector<size_t> Schema::feature_column_indices() const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < columns.size(); ++i) {
        const auto& name = columns[i].name;
        if (name == label_column) continue;
        if (std::find(ignore_columns.begin(), ignore_columns.end(), name) != ignore_columns.end()) continue;
        idx.push_back(i);
    }
    return idx;
}

int Schema::label_index() const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i].name == label_column) return static_cast<int>(i);
    return -1;
}

void Schema::validate() const {
    if (columns.empty()) throw ConfigError("schema: no columns declared");
    std::set<std::string> seen;
    for (const auto& c : columns) {
        if (c.name.empty()) throw ConfigError("schema: empty column name");
        if (!seen.insert(c.name).second) throw ConfigError("schema: duplicate column name '" + c.name + "'");
    }
    if (label_index() < 0) throw ConfigError("schema: label column '" + label_column + "' not declared");
    if (!classes.empty()) {
        std::set<std::string> cls(classes.begin(), classes.end());
        if (cls.size() != classes.size()) throw ConfigError("schema: duplicate class name");
        for (const auto& [raw, merged] : class_merges) {
            (void)raw;
            bool dropped = std::find(drop_classes.begin(), drop_classes.end(), merged) != drop_classes.end();
            if (!dropped && !cls.count(merged))
                throw ConfigError("schema: class_merges target '" + merged + "' missing from class list");
        }
        if (default_class && !cls.count(*default_class))
            throw ConfigError("schema: default_class '" + *default_class + "' missing from class list");
    }
}

std::optional<std::string> Schema::merge_label(const std::string& raw) const {
    std::string merged = raw;
    auto it = class_merges.find(raw);
    if (it != class_merges.end()) {
        merged = it->second;
    } else if (!classes.empty() &&
               std::find(classes.begin(), classes.end(), raw) == classes.end()) {
        if (std::find(drop_classes.begin(), drop_classes.end(), raw) != drop_classes.end()) return std::nullopt;
        if (!default_class) throw ConfigError("unknown label '" + raw + "' and schema has no default_class");
        merged = *default_class;
    }
    if (std::find(drop_classes.begin(), drop_classes.end(), merged) != drop_classes.end()) return std::nullopt;
    return merged;
}

std::string Schema::to_json() const {
    json j;
    j["columns"] = json::array();
    for (const auto& c : columns)
        j["columns"].push_back({{"name", c.name}, {"kind", c.kind == ColumnKind::Numeric ? "numeric" : "categorical"}});
    j["label_column"] = label_column;
    j["ignore_columns"] = ignore_columns;
    j["class_merges"] = class_merges;
    if (default_class) j["default_class"] = *default_class;
    j["classes"] = classes;
    j["drop_classes"] = drop_classes;
    return j.dump(2);
}

Schema Schema::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("schema JSON parse failure: ") + e.what());
    }
    Schema s;
    for (const auto& c : j.at("columns")) {
        SchemaColumn col;
        col.name = c.at("name").get<std::string>();
        std::string kind = c.at("kind").get<std::string>();
        if (kind == "numeric")
            col.kind = ColumnKind::Numeric;
        else if (kind == "categorical")
            col.kind = ColumnKind::Categorical;
        else
            throw ConfigError("schema: column kind must be numeric or categorical, got '" + kind + "'");
        s.columns.push_back(col);
    }
    s.label_column = j.at("label_column").get<std::string>();
    if (j.contains("ignore_columns")) s.ignore_columns = j["ignore_columns"].get<std::vector<std::string>>();
    if (j.contains("class_merges")) s.class_merges = j["class_merges"].get<std::map<std::string, std::string>>();
    if (j.contains("default_class") && !j["default_class"].is_null())
        s.default_class = j["default_class"].get<std::string>();
    if (j.contains("classes")) s.classes = j["classes"].get<std::vector<std::string>>();
    if (j.contains("drop_classes")) s.drop_classes = j["drop_classes"].get<std::vector<std::string>>();
    s.validate();
    return s;
}

Schema Schema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schema file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

uint64_t Schema::hash() const {
    const std::string canon = to_json();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

double parse_numeric(const std::string& s) {
    if (s.empty()) return std::nan("");
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) return std::nan("");
    return v;
}

}  // namespace

std::vector<RawRecord> load_csv(const std::string& path, const Schema& schema, bool has_header) {
    schema.validate();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file: " + path);

    const size_t arity = schema.columns.size();
    const auto feature_idx = schema.feature_column_indices();
    const size_t label_idx = static_cast<size_t>(schema.label_index());

    std::vector<RawRecord> records;
    std::string line;
    size_t row_number = 0;

    if (has_header) {
        if (!std::getline(in, line)) throw ConfigError(path + ": empty file, expected header row");
        ++row_number;
        auto cells = split_csv_line(line);
        if (cells.size() != arity)
            throw ConfigError(path + ": header has " + std::to_string(cells.size()) + " columns, schema declares " +
                              std::to_string(arity));
        for (size_t i = 0; i < arity; ++i) {
            if (cells[i] != schema.columns[i].name)
                throw ConfigError(path + ": header column " + std::to_string(i + 1) + " is '" + cells[i] +
                                  "', schema declares '" + schema.columns[i].name + "'");
        }
    }

    while (std::getline(in, line)) {
        ++row_number;
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != arity)
            throw ConfigError(path + ": row " + std::to_string(row_number) + " has " + std::to_string(cells.size()) +
                              " cells, expected " + std::to_string(arity));
        RawRecord rec;
        rec.values.reserve(feature_idx.size());
        for (size_t i : feature_idx) rec.values.push_back(cells[i]);
        rec.label = cells[label_idx];
        if (rec.label.empty())
            throw ConfigError(path + ": row " + std::to_string(row_number) + " has an empty label");
        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Standardizer
// ---------------------------------------------------------------------------

size_t Standardizer::encoded_dim(const Schema& schema) const {
    const auto feature_idx = schema.feature_column_indices();
    size_t d = 0;
    for (size_t f = 0; f < feature_idx.size(); ++f) {
        if (schema.columns[feature_idx[f]].kind == ColumnKind::Numeric)
            d += 1;
        else
            d += vocab[f].ordered.size();
    }
    return d;
}

Standardizer fit_preprocess(const std::vector<RawRecord>& records, const Schema& schema) {
    if (records.empty()) throw ConfigError("fit_preprocess: no records");
    const auto feature_idx = schema.feature_column_indices();
    const size_t f_count = feature_idx.size();

    Standardizer st;
    st.numeric.resize(f_count);
    st.vocab.resize(f_count);

    for (size_t f = 0; f < f_count; ++f) {
        const bool is_numeric = schema.columns[feature_idx[f]].kind == ColumnKind::Numeric;
        if (is_numeric) {
            // Non-finite cells are excluded from the moment estimates.
            double sum = 0.0;
            size_t n = 0;
            for (const auto& rec : records) {
                double v = parse_numeric(rec.values[f]);
                if (std::isfinite(v)) {
                    sum += v;
                    ++n;
                }
            }
            double mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
            double sq = 0.0;
            for (const auto& rec : records) {
                double v = parse_numeric(rec.values[f]);
                if (std::isfinite(v)) sq += (v - mean) * (v - mean);
            }
            double var = n > 0 ? sq / static_cast<double>(n) : 0.0;  // population variance
            auto& ns = st.numeric[f];
            ns.mean = mean;
            ns.stddev = std::sqrt(var);
            ns.zero_variance = !(ns.stddev > 0.0);
        } else {
            auto& cv = st.vocab[f];
            for (const auto& rec : records) {
                const std::string& v = rec.values[f];
                if (!cv.slot.count(v)) {
                    cv.slot[v] = cv.ordered.size();
                    cv.ordered.push_back(v);
                }
            }
        }
    }
    return st;
}

Dataset transform(const std::vector<RawRecord>& records, const Standardizer& st, const Schema& schema) {
    const auto feature_idx = schema.feature_column_indices();
    const size_t f_count = feature_idx.size();
    if (st.numeric.size() != f_count)
        throw ConfigError("transform: standardizer does not match schema feature count");
    const size_t d = st.encoded_dim(schema);

    // Resolve merged class names first so the class list is stable.
    std::vector<std::string> class_names = schema.classes;
    std::vector<int> row_class;
    std::vector<size_t> live_rows;
    row_class.reserve(records.size());
    for (size_t r = 0; r < records.size(); ++r) {
        auto merged = schema.merge_label(records[r].label);
        if (!merged) continue;  // dropped class
        auto it = std::find(class_names.begin(), class_names.end(), *merged);
        int idx;
        if (it == class_names.end()) {
            if (!schema.classes.empty())
                throw ConfigError("transform: label '" + *merged + "' not in schema class list");
            idx = static_cast<int>(class_names.size());
            class_names.push_back(*merged);
        } else {
            idx = static_cast<int>(it - class_names.begin());
        }
        live_rows.push_back(r);
        row_class.push_back(idx);
    }

    Dataset ds;
    ds.class_names = class_names;
    ds.features = Matrix(live_rows.size(), d);
    ds.labels.resize(live_rows.size());
    ds.provenance.assign(live_rows.size(), Provenance::Original);

    for (size_t out_r = 0; out_r < live_rows.size(); ++out_r) {
        const auto& rec = records[live_rows[out_r]];
        ds.labels[out_r] = row_class[out_r];
        auto row = ds.features.row(out_r);
        size_t off = 0;
        for (size_t f = 0; f < f_count; ++f) {
            if (schema.columns[feature_idx[f]].kind == ColumnKind::Numeric) {
                const auto& ns = st.numeric[f];
                double v = parse_numeric(rec.values[f]);
                double out;
                if (!std::isfinite(v) || ns.zero_variance)
                    out = 0.0;
                else
                    out = (v - ns.mean) / ns.stddev;
                // Extreme magnitudes can overflow through the moments; the
                // output contract is all-finite.
                if (!std::isfinite(out)) out = 0.0;
                row[off++] = out;
            } else {
                const auto& cv = st.vocab[f];
                auto it = cv.slot.find(rec.values[f]);
                for (size_t s = 0; s < cv.ordered.size(); ++s) row[off + s] = 0.0;
                if (it != cv.slot.end()) row[off + it->second] = 1.0;  // unknown value -> all-zero block
                off += cv.ordered.size();
            }
        }
    }
    ds.recompute_class_counts();
    return ds;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

size_t Dataset::labeled_rows() const {
    size_t n = 0;
    for (int l : labels)
        if (l != UNLABELED) ++n;
    return n;
}

void Dataset::recompute_class_counts() {
    class_counts.assign(class_names.size(), 0);
    for (int l : labels) {
        if (l == UNLABELED) continue;
        if (l < 0 || static_cast<size_t>(l) >= class_names.size())
            throw std::runtime_error("Dataset: class index out of range");
        ++class_counts[static_cast<size_t>(l)];
    }
}

void Dataset::validate() const {
    if (labels.size() != features.rows) throw std::runtime_error("Dataset: labels/features row mismatch");
    if (!provenance.empty() && provenance.size() != features.rows)
        throw std::runtime_error("Dataset: provenance/features row mismatch");
    for (double v : features.data)
        if (!std::isfinite(v)) throw std::runtime_error("Dataset: non-finite feature value");
    size_t labeled = 0;
    for (int l : labels) {
        if (l == UNLABELED) continue;
        if (l < 0 || static_cast<size_t>(l) >= class_names.size())
            throw std::runtime_error("Dataset: class index out of range");
        ++labeled;
    }
    size_t counted = 0;
    for (size_t c : class_counts) counted += c;
    if (counted != labeled) throw std::runtime_error("Dataset: class_counts does not sum to labeled rows");
}

int Dataset::hidden_label(size_t row) const {
    if (hidden_labels_.empty()) return labels.at(row);
    return hidden_labels_.at(row);
}

void Dataset::set_hidden_labels(std::vector<int> hidden) {
    if (hidden.size() != labels.size()) throw std::runtime_error("Dataset: hidden label size mismatch");
    hidden_labels_ = std::move(hidden);
}

// Binary container: magic, version, schema hash, class table, labels,
// hidden labels, provenance, f64 features. Little-endian throughout.
namespace {

constexpr char kDatasetMagic[4] = {'S', 'T', 'D', 'S'};
constexpr uint32_t kDatasetVersion = 1;

void write_bytes(std::ostream& out, const void* p, size_t n) { out.write(static_cast<const char*>(p), n); }

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    write_bytes(out, buf, sizeof(T));  // assumes little-endian host
}

void write_string(std::ostream& out, const std::string& s) {
    write_le<uint32_t>(out, static_cast<uint32_t>(s.size()));
    write_bytes(out, s.data(), s.size());
}

template <typename T>
T read_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("dataset container: truncated file");
    return v;
}

std::string read_string(std::istream& in) {
    uint32_t n = read_le<uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw std::runtime_error("dataset container: truncated string");
    return s;
}

}  // namespace

void Dataset::save(const std::string& path, uint64_t schema_hash) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    write_bytes(out, kDatasetMagic, 4);
    write_le<uint32_t>(out, kDatasetVersion);
    write_le<uint64_t>(out, schema_hash);
    write_le<uint32_t>(out, static_cast<uint32_t>(class_names.size()));
    for (const auto& n : class_names) write_string(out, n);
    for (size_t c : class_counts) write_le<uint64_t>(out, c);
    write_le<uint64_t>(out, rows());
    write_le<uint64_t>(out, dim());
    for (int l : labels) write_le<int32_t>(out, l);
    write_le<uint8_t>(out, hidden_labels_.empty() ? 0 : 1);
    for (int l : hidden_labels_) write_le<int32_t>(out, l);
    for (auto p : provenance) write_le<uint8_t>(out, static_cast<uint8_t>(p));
    for (double v : features.data) write_le<double>(out, v);
    if (!out) throw std::runtime_error("write failure on dataset file: " + path);
}

Dataset Dataset::load(const std::string& path, uint64_t expected_schema_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kDatasetMagic, 4) != 0)
        throw std::runtime_error(path + ": not a dataset container");
    uint32_t version = read_le<uint32_t>(in);
    if (version != kDatasetVersion) throw std::runtime_error(path + ": unsupported container version");
    uint64_t hash = read_le<uint64_t>(in);
    if (expected_schema_hash != 0 && hash != expected_schema_hash)
        throw std::runtime_error(path + ": schema hash mismatch (dataset was prepared with a different schema)");

    Dataset ds;
    uint32_t m = read_le<uint32_t>(in);
    ds.class_names.resize(m);
    for (auto& n : ds.class_names) n = read_string(in);
    ds.class_counts.resize(m);
    for (auto& c : ds.class_counts) c = read_le<uint64_t>(in);
    uint64_t n_rows = read_le<uint64_t>(in);
    uint64_t d = read_le<uint64_t>(in);
    ds.labels.resize(n_rows);
    for (auto& l : ds.labels) l = read_le<int32_t>(in);
    uint8_t has_hidden = read_le<uint8_t>(in);
    if (has_hidden) {
        std::vector<int> hidden(n_rows);
        for (auto& l : hidden) l = read_le<int32_t>(in);
        ds.hidden_labels_ = std::move(hidden);
    }
    ds.provenance.resize(n_rows);
    for (auto& p : ds.provenance) p = static_cast<Provenance>(read_le<uint8_t>(in));
    ds.features = Matrix(n_rows, d);
    for (auto& v : ds.features.data) v = read_le<double>(in);
    return ds;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

SplitIndices split_indices(const std::vector<int>& labels, size_t num_classes, double test_fraction,
                           double label_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("split: test_fraction must be in (0, 1)");
    if (!(label_fraction > 0.0 && label_fraction <= 1.0))
        throw ConfigError("split: label_fraction must be in (0, 1]");

    std::vector<std::vector<size_t>> by_class(num_classes);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == UNLABELED || labels[i] < 0 || static_cast<size_t>(labels[i]) >= num_classes)
            throw ConfigError("split: input rows must all carry a valid class label");
        by_class[static_cast<size_t>(labels[i])].push_back(i);
    }

    auto rng = seeded_rng(derive_seed(seed, 0x5354 /* split stream */));
    SplitIndices out;
    for (size_t c = 0; c < num_classes; ++c) {
        auto idx = by_class[c];
        if (idx.empty()) continue;
        shuffle_vec(idx, rng);
        size_t n = idx.size();
        size_t test_n = std::max<size_t>(1, static_cast<size_t>(std::llround(test_fraction * static_cast<double>(n))));
        if (test_n >= n)
            throw ConfigError("split: class '" + std::to_string(c) +
                              "' has no training samples left; merge it into a larger class");
        size_t train_n = n - test_n;
        size_t labeled_n =
            std::min(train_n, std::max<size_t>(1, static_cast<size_t>(std::ceil(label_fraction * static_cast<double>(train_n)))));
        for (size_t i = 0; i < test_n; ++i) out.test.push_back(idx[i]);
        for (size_t i = test_n; i < test_n + labeled_n; ++i) out.train_labeled.push_back(idx[i]);
        for (size_t i = test_n + labeled_n; i < n; ++i) out.train_unlabeled.push_back(idx[i]);
    }
    std::sort(out.test.begin(), out.test.end());
    std::sort(out.train_labeled.begin(), out.train_labeled.end());
    std::sort(out.train_unlabeled.begin(), out.train_unlabeled.end());
    return out;
}

Dataset take_rows(const Dataset& full, const std::vector<size_t>& idx, bool hide_labels) {
    Dataset out;
    out.class_names = full.class_names;
    out.features = full.features.select_rows(idx);
    out.labels.resize(idx.size());
    out.provenance.resize(idx.size());
    std::vector<int> hidden(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        int truth = full.labels[idx[i]];
        hidden[i] = full.hidden_label(idx[i]);
        if (hidden[i] == UNLABELED) hidden[i] = truth;
        out.labels[i] = hide_labels ? UNLABELED : truth;
        out.provenance[i] = full.provenance.empty() ? Provenance::Original : full.provenance[idx[i]];
    }
    out.set_hidden_labels(std::move(hidden));
    out.recompute_class_counts();
    return out;
}

SplitResult split(const Dataset& dataset, double test_fraction, double label_fraction, uint64_t seed) {
    auto idx = split_indices(dataset.labels, dataset.num_classes(), test_fraction, label_fraction, seed);
    SplitResult result;
    result.train_labeled = take_rows(dataset, idx.train_labeled, false);
    result.train_unlabeled = take_rows(dataset, idx.train_unlabeled, true);
    result.test = take_rows(dataset, idx.test, false);
    return result;
}

}  // namespace stids
