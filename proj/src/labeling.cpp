#include "ctxsent/labeling.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ostream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ctxsent/error.hpp"

namespace ctxsent {

const char* kPromptTemplateV1 =
    "You are labeling sentiment for Indonesian social-media monitoring.\n"
    "\n"
    "Topic context: {context}\n"
    "Text: {text}\n"
    "\n"
    "Given the context (a topic description) and the text, determine whether the text\n"
    "expresses sentiment toward the topic described by the context. Judge the sentiment\n"
    "toward that topic only, not the text in isolation.\n"
    "\n"
    "Answer with a JSON object and nothing else, with exactly these fields:\n"
    "  \"label\": one of {labels}\n"
    "  \"confidence\": one of \"high\", \"medium\", \"low\"\n";

namespace {

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
    auto pos = s.find(from);
    if (pos == std::string::npos)
        throw ValidationError("prompt template is missing placeholder " + from);
    return s.replace(pos, from.size(), to);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

uint64_t fnv1a(const std::string& s, uint64_t h) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

std::string build_prompt(const std::string& context, const std::string& text,
                         const LabelSchema& schema, const std::string& template_text) {
    if (trim(context).empty()) throw ValidationError("build_prompt: empty context");
    if (trim(text).empty()) throw ValidationError("build_prompt: empty text");
    std::string labels;
    for (int i = 0; i < schema.num_classes(); ++i) {
        if (i) labels += ", ";
        labels += "\"" + schema.class_name(i) + "\"";
    }
    std::string tpl = template_text.empty() ? kPromptTemplateV1 : template_text;
    tpl = replace_once(std::move(tpl), "{context}", context);
    tpl = replace_once(std::move(tpl), "{text}", text);
    tpl = replace_once(std::move(tpl), "{labels}", labels);
    return tpl;
}

LabelResponse parse_response(const std::string& raw, const LabelSchema& schema) {
    std::string body = trim(raw);
    if (body.rfind("```", 0) == 0) {
        auto nl = body.find('\n');
        auto close = body.rfind("```");
        if (nl == std::string::npos || close <= nl)
            throw ValidationError("labeling response: unterminated code fence");
        body = trim(body.substr(nl + 1, close - nl - 1));
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body); // rejects trailing content
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("labeling response: malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("label") || !j.at("label").is_string() ||
        !j.contains("confidence") || !j.at("confidence").is_string())
        throw ValidationError("labeling response: expected object with string 'label' and 'confidence'");

    LabelResponse r;
    r.raw = raw;
    r.label = j.at("label").get<std::string>();
    if (!schema.has(r.label))
        throw ValidationError("labeling response: unknown label '" + r.label + "'");
    std::string conf = j.at("confidence").get<std::string>();
    if (conf != "high" && conf != "medium" && conf != "low")
        throw ValidationError("labeling response: unknown confidence tier '" + conf + "'");
    r.confidence = confidence_from_string(conf);
    return r;
}

std::string serialize_response(const LabelResponse& r) {
    return nlohmann::json{{"label", r.label}, {"confidence", to_string(r.confidence)}}.dump();
}

void TableMockClient::set(const std::string& pair_id, const std::string& label, Confidence conf) {
    table_[pair_id] = {label, conf};
}

LabelResponse TableMockClient::label(const LabelRequest& request) {
    auto it = table_.find(request.pair_id);
    if (it == table_.end())
        throw RuntimeFailure("mock: no entry for pair '" + request.pair_id + "'");
    LabelResponse r;
    r.label = it->second.first;
    r.confidence = it->second.second;
    r.raw = serialize_response(r);
    return r;
}

LabelResponse FlakyMockClient::label(const LabelRequest& request) {
    {
        std::lock_guard<std::mutex> lock(mu_);
        int& n = attempts_[request.pair_id];
        n += 1;
        if (n <= fail_times_)
            throw RuntimeFailure("mock: simulated failure " + std::to_string(n));
    }
    return inner_.label(request);
}

LabelResponse DistributionMockClient::label(const LabelRequest& request) {
    uint64_t h = fnv1a(request.pair_id, seed_ ^ 1469598103934665603ULL);
    double u_label = static_cast<double>(h >> 11) * 0x1.0p-53;
    uint64_t h2 = fnv1a("tier", h);
    double u_tier = static_cast<double>(h2 >> 11) * 0x1.0p-53;

    // Label set comes from the request's schema name.
    LabelSchema schema = LabelSchema::by_name(request.schema_name);
    int idx = std::min(schema.num_classes() - 1,
                       static_cast<int>(u_label * schema.num_classes()));
    LabelResponse r;
    r.label = schema.class_name(idx);
    double norm = p_high_ + p_medium_ + p_low_;
    if (u_tier < p_high_ / norm) r.confidence = Confidence::high;
    else if (u_tier < (p_high_ + p_medium_) / norm) r.confidence = Confidence::medium;
    else r.confidence = Confidence::low;
    r.raw = serialize_response(r);
    return r;
}

HttpLabelClient::HttpLabelClient(HttpLabelConfig config, const LabelSchema& schema)
    : config_(std::move(config)), schema_(schema) {
    if (config_.host.empty()) throw ValidationError("labeling endpoint host is empty");
}

LabelResponse HttpLabelClient::label(const LabelRequest& request) {
    httplib::Client cli(config_.host);
    cli.set_connection_timeout(config_.timeout_seconds);
    cli.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!config_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + config_.api_key);

    nlohmann::json body = {
        {"model", config_.model},
        {"temperature", config_.temperature},
        {"response_format", {{"type", "json_object"}}},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})}};

    auto res = cli.Post(config_.path, headers, body.dump(), "application/json");
    if (!res)
        throw RuntimeFailure("labeling endpoint unreachable: " + config_.host);
    if (res->status != 200)
        throw RuntimeFailure("labeling endpoint returned HTTP " + std::to_string(res->status));
    nlohmann::json reply;
    try {
        reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
        throw RuntimeFailure("labeling endpoint returned a non-JSON body");
    }
    if (!reply.contains("choices") || reply.at("choices").empty())
        throw RuntimeFailure("labeling endpoint reply has no choices");
    std::string content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    return parse_response(content, schema_);
}

RelabelResult relabel_dataset(LabelClient& client, const Dataset& dataset,
                              const LabelSchema& schema, const RelabelPolicy& policy,
                              const std::map<std::string, PairExample>* already_labeled,
                              const std::function<void(const PairExample&)>& sink,
                              std::ostream* audit) {
    size_t n = dataset.size();
    RelabelResult result;
    result.dataset.resize(n);
    LabelingRunStats& stats = result.stats;

    std::vector<char> done(n, 0);
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<size_t> next{0};
    std::atomic<bool> cancel{false};
    std::atomic<int64_t> failures{0};

    int64_t abort_after =
        static_cast<int64_t>(policy.abort_failure_fraction * static_cast<double>(n)) + 1;

    auto process_one = [&](size_t i) {
        const PairExample& src = dataset[i];
        PairExample out = src;

        if (already_labeled) {
            auto it = already_labeled->find(src.id);
            if (it != already_labeled->end()) {
                out = it->second;
                std::lock_guard<std::mutex> lock(mu);
                stats.skipped += 1;
                result.dataset[i] = std::move(out);
                done[i] = 1;
                cv.notify_all();
                return;
            }
        }

        LabelRequest req;
        req.pair_id = src.id;
        req.context = src.context;
        req.text = src.text;
        req.schema_name = schema.name();
        req.prompt = build_prompt(src.context, src.text, schema, policy.prompt_template);

        bool ok = false;
        LabelResponse resp;
        for (int attempt = 0; attempt <= policy.max_retries && !cancel.load(); ++attempt) {
            if (attempt > 0) {
                {
                    std::lock_guard<std::mutex> lock(mu);
                    stats.retries += 1;
                }
                if (policy.backoff_base_ms > 0)
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(policy.backoff_base_ms << (attempt - 1)));
            }
            auto t0 = std::chrono::steady_clock::now();
            std::string outcome = "ok";
            try {
                resp = client.label(req);
                ok = true;
            } catch (const std::exception& e) {
                outcome = std::string("fail: ") + e.what();
            }
            if (audit) {
                auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
                std::lock_guard<std::mutex> lock(mu);
                *audit << src.id << " attempt=" << attempt + 1 << " latency_ms=" << ms << " "
                       << outcome << "\n";
            }
            if (ok) break;
        }

        {
            std::lock_guard<std::mutex> lock(mu);
            if (ok) {
                out.label = schema.index_of(resp.label);
                out.confidence = resp.confidence;
                out.extra.erase("unlabeled");
                switch (resp.confidence) {
                    case Confidence::high: stats.high += 1; break;
                    case Confidence::medium: stats.medium += 1; break;
                    case Confidence::low: stats.low += 1; break;
                    case Confidence::unknown: break;
                }
                stats.per_label[resp.label] += 1;
            } else {
                out.confidence = Confidence::unknown;
                out.extra["unlabeled"] = true;
                stats.failures += 1;
                if (failures.fetch_add(1) + 1 >= abort_after) cancel.store(true);
            }
            result.dataset[i] = std::move(out);
            done[i] = 1;
            cv.notify_all();
        }
    };

    int n_workers = std::max(1, policy.max_in_flight);
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w)
        workers.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n || cancel.load()) return;
                process_one(i);
            }
        });

    // Single writer: emit finished examples in dataset order.
    if (sink) {
        std::unique_lock<std::mutex> lock(mu);
        for (size_t i = 0; i < n; ++i) {
            cv.wait(lock, [&] { return done[i] || cancel.load(); });
            if (!done[i]) break;
            sink(result.dataset[i]);
        }
    }

    for (auto& t : workers) t.join();

    if (cancel.load())
        throw RuntimeFailure("relabel aborted: " + std::to_string(stats.failures) +
                             " failures exceeded the configured threshold");
    return result;
}

} // namespace ctxsent
