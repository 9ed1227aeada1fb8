#include "ctxsent/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "ctxsent/error.hpp"
#include "ctxsent/rng.hpp"

namespace ctxsent {

std::string to_string(SourceKind k) {
    switch (k) {
        case SourceKind::formal: return "formal";
        case SourceKind::informal: return "informal";
        case SourceKind::implicit: return "implicit";
        case SourceKind::synthetic: return "synthetic";
    }
    return "formal";
}

std::string to_string(Confidence c) {
    switch (c) {
        case Confidence::high: return "high";
        case Confidence::medium: return "medium";
        case Confidence::low: return "low";
        case Confidence::unknown: return "unknown";
    }
    return "unknown";
}

std::string to_string(Relevancy r) {
    return r == Relevancy::relevant ? "relevant" : "not_relevant";
}

SourceKind source_kind_from_string(const std::string& s) {
    if (s == "formal") return SourceKind::formal;
    if (s == "informal") return SourceKind::informal;
    if (s == "implicit") return SourceKind::implicit;
    if (s == "synthetic") return SourceKind::synthetic;
    throw ValidationError("unknown source_kind: '" + s + "'");
}

Confidence confidence_from_string(const std::string& s) {
    if (s == "high") return Confidence::high;
    if (s == "medium") return Confidence::medium;
    if (s == "low") return Confidence::low;
    if (s == "unknown") return Confidence::unknown;
    throw ValidationError("unknown confidence: '" + s + "'");
}

Relevancy relevancy_from_string(const std::string& s) {
    if (s == "relevant") return Relevancy::relevant;
    if (s == "not_relevant") return Relevancy::not_relevant;
    throw ValidationError("unknown relevancy: '" + s + "'");
}

LabelSchema::LabelSchema(std::string name, std::vector<std::string> classes)
    : name_(std::move(name)), classes_(std::move(classes)) {
    std::unordered_set<std::string> seen;
    for (const auto& c : classes_)
        if (!seen.insert(c).second)
            throw ValidationError("label schema '" + name_ + "': duplicate class name '" + c + "'");
    if (classes_.empty()) throw ValidationError("label schema '" + name_ + "' has no classes");
}

LabelSchema LabelSchema::three_class() {
    return LabelSchema("three_class", {"Negatif", "Netral", "Positif"});
}

LabelSchema LabelSchema::binary() {
    return LabelSchema("binary", {"Negatif", "Positif"});
}

LabelSchema LabelSchema::by_name(const std::string& name) {
    if (name == "three_class") return three_class();
    if (name == "binary") return binary();
    throw ValidationError("unknown label schema: '" + name + "'");
}

const std::string& LabelSchema::class_name(int index) const {
    if (index < 0 || index >= num_classes())
        throw ValidationError("class index " + std::to_string(index) + " out of range for schema '" + name_ + "'");
    return classes_[static_cast<size_t>(index)];
}

int LabelSchema::index_of(const std::string& class_name) const {
    for (int i = 0; i < num_classes(); ++i)
        if (classes_[static_cast<size_t>(i)] == class_name) return i;
    throw ValidationError("unknown label name '" + class_name + "' in schema '" + name_ + "'");
}

bool LabelSchema::has(const std::string& class_name) const {
    return std::find(classes_.begin(), classes_.end(), class_name) != classes_.end();
}

std::vector<double> ClassWeights::values() const {
    std::vector<double> v;
    v.reserve(weights.size());
    for (const auto& [name, w] : weights) {
        (void)name;
        v.push_back(w);
    }
    return v;
}

double round_half_up(double x, int decimals) {
    double scale = std::pow(10.0, decimals);
    return std::floor(x * scale + 0.5) / scale;
}

double round_half_up_1(double x) { return round_half_up(x, 1); }

namespace {
bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}
} // namespace

nlohmann::json example_to_json(const PairExample& ex, const LabelSchema& schema) {
    nlohmann::json j = ex.extra;
    j["id"] = ex.id;
    j["context"] = ex.context;
    j["text"] = ex.text;
    j["label"] = schema.class_name(ex.label);
    if (!ex.topic_id.empty()) j["topic_id"] = ex.topic_id;
    j["source_kind"] = to_string(ex.source_kind);
    j["confidence"] = to_string(ex.confidence);
    if (ex.relevancy) j["relevancy"] = to_string(*ex.relevancy);
    return j;
}

PairExample example_from_json(const nlohmann::json& j, const LabelSchema& schema) {
    if (!j.is_object()) throw ValidationError("record is not a JSON object");
    for (const char* key : {"id", "context", "text", "label"})
        if (!j.contains(key) || !j.at(key).is_string())
            throw ValidationError(std::string("record is missing string field '") + key + "'");

    PairExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.context = j.at("context").get<std::string>();
    ex.text = j.at("text").get<std::string>();
    if (ex.id.empty()) throw ValidationError("record has empty id");
    if (is_blank(ex.context)) throw ValidationError("record '" + ex.id + "' has empty context");
    if (is_blank(ex.text)) throw ValidationError("record '" + ex.id + "' has empty text");
    ex.label = schema.index_of(j.at("label").get<std::string>());
    if (j.contains("topic_id")) ex.topic_id = j.at("topic_id").get<std::string>();
    if (j.contains("source_kind")) ex.source_kind = source_kind_from_string(j.at("source_kind").get<std::string>());
    if (j.contains("confidence")) ex.confidence = confidence_from_string(j.at("confidence").get<std::string>());
    if (j.contains("relevancy")) ex.relevancy = relevancy_from_string(j.at("relevancy").get<std::string>());

    static const std::unordered_set<std::string> known = {
        "id", "context", "text", "label", "topic_id", "source_kind", "confidence", "relevancy"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) ex.extra[it.key()] = it.value();
    return ex;
}

Dataset load_dataset(std::istream& in, const LabelSchema& schema) {
    Dataset ds;
    std::unordered_set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (is_blank(line)) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
        PairExample ex;
        try {
            ex = example_from_json(j, schema);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!ids.insert(ex.id).second)
            throw ValidationError("line " + std::to_string(lineno) + ": duplicate id '" + ex.id + "'");
        ds.push_back(std::move(ex));
    }
    return ds;
}

Dataset load_dataset_file(const std::string& path, const LabelSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open dataset file: " + path);
    return load_dataset(in, schema);
}

void save_dataset(const Dataset& ds, const LabelSchema& schema, std::ostream& out) {
    for (const auto& ex : ds) out << example_to_json(ex, schema).dump() << "\n";
}

void save_dataset_file(const Dataset& ds, const LabelSchema& schema, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write dataset file: " + path);
    save_dataset(ds, schema, out);
}

DatasetStats compute_stats(const Dataset& ds, const LabelSchema& schema) {
    if (ds.empty()) throw ValidationError("compute_stats: empty dataset");
    DatasetStats st;
    st.total = static_cast<int64_t>(ds.size());

    std::vector<int64_t> class_counts(static_cast<size_t>(schema.num_classes()), 0);
    std::vector<int64_t> source_counts(4, 0);
    bool any_relevancy = false;
    for (const auto& ex : ds) {
        if (ex.label < 0 || ex.label >= schema.num_classes())
            throw ValidationError("example '" + ex.id + "': label index out of schema range");
        class_counts[static_cast<size_t>(ex.label)] += 1;
        source_counts[static_cast<size_t>(ex.source_kind)] += 1;
        if (ex.relevancy) any_relevancy = true;
    }
    for (int c = 0; c < schema.num_classes(); ++c) {
        double pct = round_half_up_1(100.0 * static_cast<double>(class_counts[static_cast<size_t>(c)]) /
                                     static_cast<double>(st.total));
        st.per_class.emplace_back(schema.class_name(c), class_counts[static_cast<size_t>(c)], pct);
    }
    for (int k = 0; k < 4; ++k)
        if (source_counts[static_cast<size_t>(k)] > 0)
            st.per_source.emplace_back(to_string(static_cast<SourceKind>(k)), source_counts[static_cast<size_t>(k)]);

    if (any_relevancy) {
        DatasetStats::CrossTab tab;
        tab.class_names = schema.classes();
        for (Relevancy r : {Relevancy::relevant, Relevancy::not_relevant}) {
            std::vector<int64_t> row(static_cast<size_t>(schema.num_classes()), 0);
            for (const auto& ex : ds)
                if (ex.relevancy && *ex.relevancy == r) row[static_cast<size_t>(ex.label)] += 1;
            int64_t row_total = 0;
            for (int64_t n : row) row_total += n;
            std::vector<double> pct(row.size(), 0.0);
            if (row_total > 0)
                for (size_t i = 0; i < row.size(); ++i)
                    pct[i] = round_half_up_1(100.0 * static_cast<double>(row[i]) / static_cast<double>(row_total));
            tab.rows.emplace_back(to_string(r), std::move(row));
            tab.row_percentages.emplace_back(to_string(r), std::move(pct));
        }
        st.cross_tab = std::move(tab);
    }
    return st;
}

ClassWeights class_weights(const DatasetStats& stats, const LabelSchema& schema) {
    ClassWeights cw;
    int k = schema.num_classes();
    if (static_cast<int>(stats.per_class.size()) != k)
        throw ValidationError("class_weights: stats do not match schema");
    for (const auto& [name, count, pct] : stats.per_class) {
        (void)pct;
        if (count <= 0)
            throw ValidationError("class_weights: class '" + name + "' has zero count; weighting undefined");
        cw.weights.emplace_back(name, static_cast<double>(stats.total) /
                                          (static_cast<double>(k) * static_cast<double>(count)));
    }
    return cw;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, const LabelSchema& schema,
                                             double holdout_fraction, uint64_t seed) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
        throw ValidationError("stratified_split: fraction must be in (0,1)");
    int k = schema.num_classes();
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(k));
    for (size_t i = 0; i < ds.size(); ++i) {
        int label = ds[i].label;
        if (label < 0 || label >= k)
            throw ValidationError("stratified_split: label out of schema range");
        by_class[static_cast<size_t>(label)].push_back(i);
    }
    for (int c = 0; c < k; ++c)
        if (by_class[static_cast<size_t>(c)].size() < 2)
            throw ValidationError("stratified_split: class '" + schema.class_name(c) +
                                  "' has fewer than 2 examples");

    // Largest-remainder allocation against a total of round(N * fraction).
    int64_t target = static_cast<int64_t>(round_half_up(static_cast<double>(ds.size()) * holdout_fraction, 0));
    std::vector<int64_t> alloc(static_cast<size_t>(k));
    std::vector<std::pair<double, int>> remainders;
    int64_t floors_sum = 0;
    for (int c = 0; c < k; ++c) {
        double exact = static_cast<double>(by_class[static_cast<size_t>(c)].size()) * holdout_fraction;
        alloc[static_cast<size_t>(c)] = static_cast<int64_t>(std::floor(exact));
        floors_sum += alloc[static_cast<size_t>(c)];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int64_t i = 0; i < target - floors_sum; ++i)
        alloc[static_cast<size_t>(remainders[static_cast<size_t>(i % k)].second)] += 1;

    for (int c = 0; c < k; ++c) {
        int64_t n = static_cast<int64_t>(by_class[static_cast<size_t>(c)].size());
        int64_t h = alloc[static_cast<size_t>(c)];
        if (h <= 0 || h >= n)
            throw ValidationError("stratified_split: fraction leaves class '" + schema.class_name(c) +
                                  "' empty on one side");
    }

    std::vector<char> in_holdout(ds.size(), 0);
    for (int c = 0; c < k; ++c) {
        auto indices = by_class[static_cast<size_t>(c)];
        Rng rng(derive_seed(seed, static_cast<uint64_t>(c)));
        rng.shuffle(indices);
        for (int64_t i = 0; i < alloc[static_cast<size_t>(c)]; ++i)
            in_holdout[indices[static_cast<size_t>(i)]] = 1;
    }

    Dataset train, holdout;
    for (size_t i = 0; i < ds.size(); ++i)
        (in_holdout[i] ? holdout : train).push_back(ds[i]);
    return {std::move(train), std::move(holdout)};
}

Dataset to_binary(const Dataset& ds, bool* warning) {
    Dataset out;
    for (const auto& ex : ds) {
        if (ex.label < 0 || ex.label > 2)
            throw ValidationError("to_binary: example '" + ex.id + "' is not three-class labeled");
        if (ex.label == 1) continue; // Netral
        PairExample copy = ex;
        copy.label = ex.label == 0 ? 0 : 1;
        out.push_back(std::move(copy));
    }
    if (warning) *warning = out.empty();
    return out;
}

std::string render_stats_text(const DatasetStats& stats) {
    std::ostringstream os;
    os << "Sentiment        Count  Percentage\n";
    os << "---------------------------------\n";
    char buf[128];
    for (const auto& [name, count, pct] : stats.per_class) {
        std::snprintf(buf, sizeof(buf), "%-14s %7lld %10.1f%%\n", name.c_str(),
                      static_cast<long long>(count), pct);
        os << buf;
    }
    os << "---------------------------------\n";
    std::snprintf(buf, sizeof(buf), "%-14s %7lld %10.1f%%\n", "Total",
                  static_cast<long long>(stats.total), 100.0);
    os << buf;
    if (!stats.per_source.empty()) {
        os << "\nSource            Count\n";
        for (const auto& [name, count] : stats.per_source) {
            std::snprintf(buf, sizeof(buf), "%-14s %7lld\n", name.c_str(),
                          static_cast<long long>(count));
            os << buf;
        }
    }
    if (stats.cross_tab) {
        os << "\nRelevancy x class (row %)\n";
        for (size_t r = 0; r < stats.cross_tab->rows.size(); ++r) {
            os << stats.cross_tab->rows[r].first << ":";
            for (size_t c = 0; c < stats.cross_tab->class_names.size(); ++c) {
                std::snprintf(buf, sizeof(buf), " %s=%lld (%.1f%%)",
                              stats.cross_tab->class_names[c].c_str(),
                              static_cast<long long>(stats.cross_tab->rows[r].second[c]),
                              stats.cross_tab->row_percentages[r].second[c]);
                os << buf;
            }
            os << "\n";
        }
    }
    return os.str();
}

std::string render_stats_csv(const DatasetStats& stats) {
    std::ostringstream os;
    os << "class,count,percentage\n";
    char buf[64];
    for (const auto& [name, count, pct] : stats.per_class) {
        std::snprintf(buf, sizeof(buf), "%.1f", pct);
        os << name << "," << count << "," << buf << "\n";
    }
    return os.str();
}

std::string render_weights_text(const ClassWeights& w) {
    std::ostringstream os;
    char buf[64];
    for (const auto& [name, weight] : w.weights) {
        std::snprintf(buf, sizeof(buf), "%.3f", weight);
        os << name << ": " << buf << "\n";
    }
    return os.str();
}

} // namespace ctxsent
