#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctxsent/data.hpp"
#include "ctxsent/metrics.hpp"
#include "ctxsent/model.hpp"

namespace ctxsent {

enum class AdapterMode { context_conditioned, context_free };

// Uniform prediction interface for the benchmark harness. context_free
// adapters must ignore the context entirely (probed, see below).
class ClassifierAdapter {
public:
    virtual ~ClassifierAdapter() = default;
    virtual const std::string& name() const = 0;
    virtual AdapterMode mode() const = 0;
    virtual int predict_label(const std::string& context, const std::string& text) = 0;
};

// In-repo model, context-conditioned.
class LocalModelAdapter : public ClassifierAdapter {
public:
    LocalModelAdapter(std::string name, Model model, const Vocab& vocab);
    const std::string& name() const override { return name_; }
    AdapterMode mode() const override { return AdapterMode::context_conditioned; }
    int predict_label(const std::string& context, const std::string& text) override;

private:
    std::string name_;
    Model model_;
    const Vocab& vocab_;
};

// Context-blind ablation of the in-repo model: the context span is replaced
// by a single UNK token at encoding time, all else equal.
class ContextBlindAdapter : public ClassifierAdapter {
public:
    ContextBlindAdapter(std::string name, Model model, const Vocab& vocab);
    const std::string& name() const override { return name_; }
    AdapterMode mode() const override { return AdapterMode::context_free; }
    int predict_label(const std::string& context, const std::string& text) override;

private:
    std::string name_;
    Model model_;
    const Vocab& vocab_;
};

// Wraps an arbitrary prediction function (oracles and constant baselines in
// tests, lightweight heuristics in tools).
class FunctionAdapter : public ClassifierAdapter {
public:
    using Fn = std::function<int(const std::string&, const std::string&)>;
    FunctionAdapter(std::string name, AdapterMode mode, Fn fn)
        : name_(std::move(name)), mode_(mode), fn_(std::move(fn)) {}
    const std::string& name() const override { return name_; }
    AdapterMode mode() const override { return mode_; }
    int predict_label(const std::string& context, const std::string& text) override {
        return fn_(context, text);
    }

private:
    std::string name_;
    AdapterMode mode_;
    Fn fn_;
};

// Remote classifier over HTTP. The request body template uses {text} and,
// for context-conditioned adapters, {context}; a context_free template must
// not mention {context}. The response is JSON with a "label" class name.
struct HttpAdapterConfig {
    std::string name;
    AdapterMode mode = AdapterMode::context_free;
    std::string host;            // e.g. "http://localhost:8081"
    std::string path = "/classify";
    std::string health_path = "/health";
    std::string request_template; // empty -> default JSON body
    int timeout_seconds = 10;
    int max_retries = 2;
};

class HttpAdapter : public ClassifierAdapter {
public:
    // Probes health_path at registration; throws RuntimeFailure when the
    // endpoint is unreachable.
    HttpAdapter(HttpAdapterConfig config, const LabelSchema& schema);
    const std::string& name() const override { return config_.name; }
    AdapterMode mode() const override { return config_.mode; }
    int predict_label(const std::string& context, const std::string& text) override;

    const std::string& request_template() const { return config_.request_template; }

private:
    HttpAdapterConfig config_;
    LabelSchema schema_;
};

// ---- synthetic context-dependence corpus --------------------------------

struct TopicSpec {
    std::string topic_id;
    std::string context; // topic description fed to the model
    // cue word -> gold class index under this topic
    std::vector<std::pair<std::string, int>> cues;
};

struct SyntheticSpec {
    // Topics come in antagonistic pairs: (0,1), (2,3), ... share cue words
    // with different gold labels.
    std::vector<TopicSpec> topics;
    int total_examples = 3000;
    double neutral_filler_rate = 0.1;
    double flip_fraction = 0.5; // fraction of examples that belong to flip pairs
    uint64_t seed = 7;
};

SyntheticSpec default_synthetic_spec();

// Gold label is a deterministic function of (topic, cue). Flip pairs share
// identical text across the two topics of a pair with differing gold
// labels and carry a "flip_group" key; the Bayes-optimal context-free
// accuracy on the flip subset is 0.5 by construction.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Best achievable context-free accuracy on the flip subset: assign each
// distinct text its majority label. Test oracle for the 0.5 ceiling.
double flip_subset_ceiling(const Dataset& ds);

// ---- evaluation ---------------------------------------------------------

// Predictions gathered in dataset order; failures recorded per pair and
// flagged as reduced coverage. When cache_dir is non-empty, predictions are
// cached on disk keyed by (adapter name, pair id) and reused on re-runs.
EvalReport evaluate_adapter(ClassifierAdapter& adapter, const Dataset& dataset,
                            const LabelSchema& schema, const std::string& cache_dir = "");

// Queries the adapter with the same text under two different contexts; a
// context_free adapter must answer identically. Returns a description of
// the first violation found, if any.
std::optional<std::string> probe_context_free(ClassifierAdapter& adapter, const Dataset& dataset,
                                              size_t max_probes = 16);

struct FlipRow {
    std::string adapter;
    double flip_accuracy = 0.0;
    long long flip_n = 0;
};

struct ComparisonResult {
    std::vector<EvalReport> reports;
    std::vector<FlipRow> flip_rows;
    std::vector<std::string> notes; // probe violations, coverage warnings
    std::string markdown;
    std::string overall_csv;
    std::string per_class_csv;
    std::string flip_csv; // adapter,flip_accuracy,flip_n
};

// Head-to-head evaluation of all adapters on identical pair-id sets; the
// per-adapter datasets must agree (same-test-set discipline) or the call is
// refused. context_free adapters are probed for context invariance first.
ComparisonResult compare(const std::vector<ClassifierAdapter*>& adapters,
                         const std::vector<const Dataset*>& datasets, const LabelSchema& schema,
                         const std::string& cache_dir = "");

ComparisonResult compare(const std::vector<ClassifierAdapter*>& adapters, const Dataset& dataset,
                         const LabelSchema& schema, const std::string& cache_dir = "");

} // namespace ctxsent
