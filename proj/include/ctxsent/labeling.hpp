#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ctxsent/data.hpp"

namespace ctxsent {

struct LabelRequest {
    std::string pair_id;
    std::string context;
    std::string text;
    std::string schema_name;
    std::string prompt;
};

struct LabelResponse {
    std::string label;
    Confidence confidence = Confidence::unknown;
    std::string raw; // provider payload kept for audit
};

struct LabelingRunStats {
    int64_t high = 0, medium = 0, low = 0;
    std::map<std::string, int64_t> per_label;
    int64_t failures = 0;
    int64_t retries = 0;
    int64_t skipped = 0; // already labeled on resume

    int64_t successes() const { return high + medium + low; }
};

// Versioned prompt template. Placeholders: {context}, {text}, {labels}.
extern const char* kPromptTemplateV1;

// Deterministic prompt embedding the context, the text, the
// toward-the-topic instruction, the allowed label names, and the
// structured-output directive. A custom template may be supplied (e.g.
// loaded from an asset file).
std::string build_prompt(const std::string& context, const std::string& text,
                         const LabelSchema& schema, const std::string& template_text = "");

// Strict parse of the provider's message content: a JSON object with
// "label" and "confidence", optionally wrapped in code fences. Trailing
// prose is rejected.
LabelResponse parse_response(const std::string& raw, const LabelSchema& schema);

std::string serialize_response(const LabelResponse& r);

// Abstract labeling backend. Implementations throw RuntimeFailure on a
// failed attempt; relabel_dataset handles retries.
class LabelClient {
public:
    virtual ~LabelClient() = default;
    virtual LabelResponse label(const LabelRequest& request) = 0;
};

// Fixed lookup table: pair id -> (label name, confidence).
class TableMockClient : public LabelClient {
public:
    void set(const std::string& pair_id, const std::string& label, Confidence conf);
    LabelResponse label(const LabelRequest& request) override;

private:
    std::map<std::string, std::pair<std::string, Confidence>> table_;
};

// Fails the first `fail_times` attempts per pair, then delegates.
class FlakyMockClient : public LabelClient {
public:
    FlakyMockClient(LabelClient& inner, int fail_times) : inner_(inner), fail_times_(fail_times) {}
    LabelResponse label(const LabelRequest& request) override;

private:
    LabelClient& inner_;
    int fail_times_;
    std::map<std::string, int> attempts_;
    std::mutex mu_;
};

// Deterministic per-pair-id draw: label uniform over the schema, confidence
// tier from the given fractions. The same id always gets the same answer.
class DistributionMockClient : public LabelClient {
public:
    DistributionMockClient(uint64_t seed, double p_high, double p_medium, double p_low)
        : seed_(seed), p_high_(p_high), p_medium_(p_medium), p_low_(p_low) {}
    LabelResponse label(const LabelRequest& request) override;

private:
    uint64_t seed_;
    double p_high_, p_medium_, p_low_;
};

// Provider-style chat-completion endpoint over HTTP.
struct HttpLabelConfig {
    std::string host;      // e.g. "http://localhost:8080"
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key;   // sent as Bearer token when non-empty
    double temperature = 0.0;
    int timeout_seconds = 30;
};

class HttpLabelClient : public LabelClient {
public:
    HttpLabelClient(HttpLabelConfig config, const LabelSchema& schema);
    LabelResponse label(const LabelRequest& request) override;

private:
    HttpLabelConfig config_;
    LabelSchema schema_;
};

struct RelabelPolicy {
    int max_retries = 3;        // attempts per pair = max_retries + 1
    int backoff_base_ms = 0;    // exponential: base * 2^attempt
    int max_in_flight = 4;
    double abort_failure_fraction = 0.5;
    std::string prompt_template; // empty -> kPromptTemplateV1
};

struct RelabelResult {
    Dataset dataset; // dataset order; failed pairs flagged via extra["unlabeled"]
    LabelingRunStats stats;
};

// Labels every pair not already present in `already_labeled` (resume
// support), with bounded concurrency and per-pair retries. `sink`, when
// set, receives each finished example in dataset order as soon as the
// contiguous prefix is complete. `audit`, when set, gets one line per
// request attempt: pair id, attempt, latency ms, outcome.
RelabelResult relabel_dataset(LabelClient& client, const Dataset& dataset,
                              const LabelSchema& schema, const RelabelPolicy& policy,
                              const std::map<std::string, PairExample>* already_labeled = nullptr,
                              const std::function<void(const PairExample&)>& sink = nullptr,
                              std::ostream* audit = nullptr);

} // namespace ctxsent
