#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stids/matrix.hpp"

namespace stids {

// ---------------------------------------------------------------------------
// Flow-record ingestion: CSV -> encoded/standardized feature matrix with
// merged fine-grained class labels and stratified labeled/unlabeled splits.
// ---------------------------------------------------------------------------

enum class ColumnKind { Numeric, Categorical };

struct SchemaColumn {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
};

// Describes one CSV layout: every file column in order (features, the label
// column, and any ignored columns), plus the class-merge map that folds
// sparse raw classes into the final class list.
struct Schema {
    std::vector<SchemaColumn> columns;            // all file columns, in order
    std::string label_column;
    std::vector<std::string> ignore_columns;      // present in the file, not used as features
    std::map<std::string, std::string> class_merges;  // raw label -> merged label
    std::optional<std::string> default_class;     // fallback for labels not covered above
    std::vector<std::string> classes;             // fixed class order; empty = first-appearance
    std::vector<std::string> drop_classes;        // rows with these merged labels are discarded

    size_t feature_count() const;
    std::vector<size_t> feature_column_indices() const;  // positions within `columns`
    int label_index() const;                             // position of the label column
    void validate() const;

    // Maps a raw label through class_merges / default_class. Returns the
    // merged name, or nullopt if the label belongs to drop_classes.
    std::optional<std::string> merge_label(const std::string& raw) const;

    std::string to_json() const;
    static Schema from_json(const std::string& text);
    static Schema load(const std::string& path);

    // FNV-1a over the canonical JSON form; embedded in dataset containers so
    // mismatched schema/dataset pairs are rejected at load time.
    uint64_t hash() const;
};

struct RawRecord {
    std::vector<std::string> values;  // feature cells only, schema order
    std::string label;
};

enum class Provenance : uint8_t { Original = 0, Pseudo = 1, Synthetic = 2 };

inline constexpr int UNLABELED = -1;

// Immutable-by-convention sample collection. `labels` is what training sees:
// unlabeled rows carry the UNLABELED sentinel. The true labels of unlabeled
// rows are kept privately for post-hoc diagnostics only.
class Dataset {
public:
    Matrix features;                       // [n_rows x d]
    std::vector<int> labels;               // class index or UNLABELED
    std::vector<std::string> class_names;  // size M
    std::vector<size_t> class_counts;      // labeled rows per class
    std::vector<Provenance> provenance;    // one flag per row

    size_t rows() const { return features.rows; }
    size_t dim() const { return features.cols; }
    size_t num_classes() const { return class_names.size(); }
    size_t labeled_rows() const;

    void recompute_class_counts();
    void validate() const;

    // Diagnostics only: the withheld true label of a row (UNLABELED if none
    // was recorded). Never consulted by any training code path.
    int hidden_label(size_t row) const;
    void set_hidden_labels(std::vector<int> hidden);
    bool has_hidden_labels() const { return !hidden_labels_.empty(); }

    void save(const std::string& path, uint64_t schema_hash) const;
    static Dataset load(const std::string& path, uint64_t expected_schema_hash = 0);

private:
    std::vector<int> hidden_labels_;
};

// Fitted preprocessing state: per-numeric-column population moments and
// per-categorical-column one-hot vocabularies.
struct Standardizer {
    struct NumericStats {
        double mean = 0.0;
        double stddev = 0.0;      // population (1/N)
        bool zero_variance = false;
    };
    struct CategoricalVocab {
        std::map<std::string, size_t> slot;   // value -> one-hot slot
        std::vector<std::string> ordered;     // first-appearance order
    };
    // Parallel to the schema's feature columns.
    std::vector<NumericStats> numeric;        // valid where kind == Numeric
    std::vector<CategoricalVocab> vocab;      // valid where kind == Categorical

    size_t encoded_dim(const Schema& schema) const;
};

std::vector<RawRecord> load_csv(const std::string& path, const Schema& schema, bool has_header);

Standardizer fit_preprocess(const std::vector<RawRecord>& records, const Schema& schema);

Dataset transform(const std::vector<RawRecord>& records, const Standardizer& std_state, const Schema& schema);

struct SplitResult {
    Dataset train_labeled;
    Dataset train_unlabeled;
    Dataset test;
};

// Stratified index split shared by split() and the leakage-free CLI prepare
// path (split raw rows first, fit the standardizer on train rows only).
struct SplitIndices {
    std::vector<size_t> train_labeled;
    std::vector<size_t> train_unlabeled;
    std::vector<size_t> test;
};
SplitIndices split_indices(const std::vector<int>& labels, size_t num_classes, double test_fraction,
                           double label_fraction, uint64_t seed);

SplitResult split(const Dataset& dataset, double test_fraction, double label_fraction, uint64_t seed);

// Materializes one split of `full` given row indices; rows in
// `hide_labels` mode carry UNLABELED with the truth stored for diagnostics.
Dataset take_rows(const Dataset& full, const std::vector<size_t>& idx, bool hide_labels);

}  // namespace stids
