#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ctxsent {

enum class SourceKind { formal, informal, implicit, synthetic };
enum class Confidence { high, medium, low, unknown };
enum class Relevancy { relevant, not_relevant };

std::string to_string(SourceKind k);
std::string to_string(Confidence c);
std::string to_string(Relevancy r);
SourceKind source_kind_from_string(const std::string& s);
Confidence confidence_from_string(const std::string& s);
Relevancy relevancy_from_string(const std::string& s);

// One (context, text, label) record; the atom of every dataset.
struct PairExample {
    std::string id;
    std::string context;
    std::string text;
    int label = 0; // index in the active LabelSchema
    std::string topic_id;
    SourceKind source_kind = SourceKind::formal;
    Confidence confidence = Confidence::unknown;
    std::optional<Relevancy> relevancy;
    // Unknown JSON keys, preserved verbatim on round-trip.
    nlohmann::json extra = nlohmann::json::object();
};

using Dataset = std::vector<PairExample>;

// Class set and index mapping for a task variant.
class LabelSchema {
public:
    LabelSchema(std::string name, std::vector<std::string> classes);

    static LabelSchema three_class(); // Negatif=0, Netral=1, Positif=2
    static LabelSchema binary();      // Negatif=0, Positif=1
    static LabelSchema by_name(const std::string& name);

    const std::string& name() const { return name_; }
    int num_classes() const { return static_cast<int>(classes_.size()); }
    const std::vector<std::string>& classes() const { return classes_; }
    const std::string& class_name(int index) const;
    int index_of(const std::string& class_name) const; // throws on unknown name
    bool has(const std::string& class_name) const;

private:
    std::string name_;
    std::vector<std::string> classes_;
};

struct DatasetStats {
    int64_t total = 0;
    // (class name, count, percentage rounded half-up to one decimal)
    std::vector<std::tuple<std::string, int64_t, double>> per_class;
    std::vector<std::pair<std::string, int64_t>> per_source;
    // Present iff any example carries a relevancy field:
    // (relevancy, class) -> count, plus per-row percentages.
    struct CrossTab {
        std::vector<std::string> class_names;
        std::vector<std::pair<std::string, std::vector<int64_t>>> rows;
        std::vector<std::pair<std::string, std::vector<double>>> row_percentages;
    };
    std::optional<CrossTab> cross_tab;
};

struct ClassWeights {
    std::vector<std::pair<std::string, double>> weights; // full double precision

    std::vector<double> values() const;
};

// Rounds half-up to one decimal place (Table-style percentage display).
double round_half_up_1(double x);
double round_half_up(double x, int decimals);

// ---- dataset I/O --------------------------------------------------------

// JSON-lines: one object per line with keys id, context, text, label (class
// name) and optional topic_id, source_kind, confidence, relevancy. Unknown
// keys are preserved. Errors report the line number. Duplicate ids and
// empty context/text are rejected.
Dataset load_dataset(std::istream& in, const LabelSchema& schema);
Dataset load_dataset_file(const std::string& path, const LabelSchema& schema);
void save_dataset(const Dataset& ds, const LabelSchema& schema, std::ostream& out);
void save_dataset_file(const Dataset& ds, const LabelSchema& schema, const std::string& path);

nlohmann::json example_to_json(const PairExample& ex, const LabelSchema& schema);
PairExample example_from_json(const nlohmann::json& j, const LabelSchema& schema);

// ---- dataset operations -------------------------------------------------

DatasetStats compute_stats(const Dataset& ds, const LabelSchema& schema);

// w_c = N / (K * n_c). Every class count must be positive.
ClassWeights class_weights(const DatasetStats& stats, const LabelSchema& schema);

// Per-class holdout sizes by largest-remainder rounding of n_c * fraction
// against a total target of round(N * fraction); within-class selection is
// a seeded shuffle. Deterministic for a fixed seed.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, const LabelSchema& schema,
                                             double holdout_fraction, uint64_t seed);

// Drops Netral, keeps Negatif at 0 and remaps Positif to 1. Sets `warning`
// when the result is empty.
Dataset to_binary(const Dataset& ds, bool* warning = nullptr);

// Plain-text and CSV renderings of DatasetStats (Table-style columns).
std::string render_stats_text(const DatasetStats& stats);
std::string render_stats_csv(const DatasetStats& stats);
std::string render_weights_text(const ClassWeights& w);

} // namespace ctxsent
