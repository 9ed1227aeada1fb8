#include <doctest.h>

#include <map>
#include <sstream>
#include <string>

#include "ctxsent/error.hpp"
#include "ctxsent/labeling.hpp"

using namespace ctxsent;

namespace {

Dataset labeling_dataset(int n) {
    Dataset ds;
    for (int i = 0; i < n; ++i) {
        PairExample ex;
        ex.id = "p-" + std::to_string(i);
        ex.context = "kebijakan nomor " + std::to_string(i);
        ex.text = "pendapat warga tentang topik " + std::to_string(i);
        ex.label = 1;
        ds.push_back(ex);
    }
    return ds;
}

std::string run_to_string(LabelClient& client, const Dataset& ds, const RelabelPolicy& policy,
                          const std::map<std::string, PairExample>* already = nullptr,
                          LabelingRunStats* stats_out = nullptr) {
    auto schema = LabelSchema::three_class();
    std::ostringstream out;
    auto result = relabel_dataset(client, ds, schema, policy, already,
                                  [&](const PairExample& ex) {
                                      out << example_to_json(ex, schema).dump() << "\n";
                                  });
    if (stats_out) *stats_out = result.stats;
    return out.str();
}

} // namespace

TEST_SUITE("labeling") {

TEST_CASE("prompt embeds the inputs verbatim exactly once") {
    auto schema = LabelSchema::three_class();
    std::string context = "subsidi pupuk untuk petani";
    std::string text = "petani senang, harga pupuk turun";
    std::string p1 = build_prompt(context, text, schema);
    std::string p2 = build_prompt(context, text, schema);
    CHECK(p1 == p2);

    auto count = [&](const std::string& needle) {
        size_t c = 0, pos = 0;
        while ((pos = p1.find(needle, pos)) != std::string::npos) {
            ++c;
            pos += needle.size();
        }
        return c;
    };
    CHECK(count(context) == 1);
    CHECK(count(text) == 1);
    for (const auto& name : schema.classes()) CHECK(p1.find("\"" + name + "\"") != std::string::npos);
    // The toward-the-topic instruction and the structured-output directive.
    CHECK(p1.find("toward") != std::string::npos);
    CHECK(p1.find("JSON") != std::string::npos);
    CHECK(p1.find("{context}") == std::string::npos);
    CHECK(p1.find("{text}") == std::string::npos);

    CHECK_THROWS_AS(build_prompt("", text, schema), ValidationError);
    CHECK_THROWS_AS(build_prompt(context, "   ", schema), ValidationError);
    CHECK_THROWS_AS(build_prompt(context, text, schema, "template without placeholders"),
                    ValidationError);
}

TEST_CASE("binary schema prompts advertise only two labels") {
    auto p = build_prompt("c", "t", LabelSchema::binary());
    CHECK(p.find("\"Negatif\"") != std::string::npos);
    CHECK(p.find("\"Positif\"") != std::string::npos);
    CHECK(p.find("Netral") == std::string::npos);
}

TEST_CASE("response parsing accepts plain and fenced JSON") {
    auto schema = LabelSchema::three_class();
    auto r1 = parse_response(R"({"label":"Positif","confidence":"high"})", schema);
    CHECK(r1.label == "Positif");
    CHECK(r1.confidence == Confidence::high);

    auto r2 = parse_response("```json\n{\"label\": \"Netral\", \"confidence\": \"medium\"}\n```",
                             schema);
    CHECK(r2.label == "Netral");
    CHECK(r2.confidence == Confidence::medium);

    auto r3 = parse_response("  \n```\n{\"label\":\"Negatif\",\"confidence\":\"low\"}\n```  ",
                             schema);
    CHECK(r3.label == "Negatif");
    CHECK(r3.confidence == Confidence::low);
}

TEST_CASE("response parsing is strict") {
    auto schema = LabelSchema::three_class();
    CHECK_THROWS_AS(parse_response("Sentimen: positif", schema), ValidationError);
    CHECK_THROWS_AS(parse_response(R"({"label":"Positif","confidence":"high"} maaf)", schema),
                    ValidationError);
    CHECK_THROWS_AS(parse_response(R"({"label":"Senang","confidence":"high"})", schema),
                    ValidationError);
    CHECK_THROWS_AS(parse_response(R"({"label":"Positif","confidence":"certain"})", schema),
                    ValidationError);
    CHECK_THROWS_AS(parse_response(R"({"label":"Positif"})", schema), ValidationError);
    CHECK_THROWS_AS(parse_response(R"(["Positif","high"])", schema), ValidationError);
    CHECK_THROWS_AS(parse_response("```json\n{\"label\":\"Positif\"", schema), ValidationError);
    // Binary schema rejects Netral.
    CHECK_THROWS_AS(parse_response(R"({"label":"Netral","confidence":"high"})",
                                   LabelSchema::binary()),
                    ValidationError);
}

TEST_CASE("relabel applies labels and counts tiers") {
    Dataset ds = labeling_dataset(3);
    TableMockClient mock;
    mock.set("p-0", "Negatif", Confidence::high);
    mock.set("p-1", "Positif", Confidence::medium);
    mock.set("p-2", "Netral", Confidence::low);

    auto schema = LabelSchema::three_class();
    auto result = relabel_dataset(mock, ds, schema, RelabelPolicy{});
    REQUIRE(result.dataset.size() == 3);
    CHECK(result.dataset[0].label == 0);
    CHECK(result.dataset[0].confidence == Confidence::high);
    CHECK(result.dataset[1].label == 2);
    CHECK(result.dataset[2].label == 1);
    CHECK(result.stats.high == 1);
    CHECK(result.stats.medium == 1);
    CHECK(result.stats.low == 1);
    CHECK(result.stats.failures == 0);
    CHECK(result.stats.per_label.at("Positif") == 1);
}

TEST_CASE("transient failures are retried and accounted") {
    Dataset ds = labeling_dataset(4);
    TableMockClient inner;
    for (const auto& ex : ds) inner.set(ex.id, "Positif", Confidence::high);
    FlakyMockClient flaky(inner, 2); // each pair fails twice, then succeeds

    RelabelPolicy policy;
    policy.max_retries = 3;
    policy.max_in_flight = 2;
    LabelingRunStats stats;
    std::string out = run_to_string(flaky, ds, policy, nullptr, &stats);
    CHECK(stats.successes() == 4);
    CHECK(stats.failures == 0);
    CHECK(stats.retries == 8); // 2 extra attempts per pair
    CHECK(out.find("\"unlabeled\"") == std::string::npos);
}

TEST_CASE("exhausted retries mark the pair, not the run") {
    Dataset ds = labeling_dataset(3);
    TableMockClient inner;
    for (const auto& ex : ds) inner.set(ex.id, "Negatif", Confidence::high);
    inner.set("p-1", "Negatif", Confidence::high);
    FlakyMockClient flaky(inner, 100);

    RelabelPolicy policy;
    policy.max_retries = 1;
    policy.abort_failure_fraction = 2.0; // never abort in this test
    auto schema = LabelSchema::three_class();
    auto result = relabel_dataset(flaky, ds, schema, policy);
    CHECK(result.stats.failures == 3);
    for (const auto& ex : result.dataset) {
        CHECK(ex.confidence == Confidence::unknown);
        CHECK(ex.extra.value("unlabeled", false));
    }
}

TEST_CASE("a failing endpoint aborts the run") {
    Dataset ds = labeling_dataset(20);
    TableMockClient empty; // knows no ids: every request fails
    RelabelPolicy policy;
    policy.max_retries = 0;
    policy.abort_failure_fraction = 0.25;
    policy.max_in_flight = 4;
    CHECK_THROWS_AS(relabel_dataset(empty, ds, LabelSchema::three_class(), policy),
                    RuntimeFailure);
}

TEST_CASE("audit log records every attempt") {
    Dataset ds = labeling_dataset(2);
    TableMockClient inner;
    inner.set("p-0", "Positif", Confidence::high);
    inner.set("p-1", "Positif", Confidence::high);
    FlakyMockClient flaky(inner, 1);

    RelabelPolicy policy;
    policy.max_retries = 2;
    policy.max_in_flight = 1;
    std::ostringstream audit;
    relabel_dataset(flaky, ds, LabelSchema::three_class(), policy, nullptr, nullptr, &audit);
    std::string log = audit.str();
    // 2 pairs x (1 failure + 1 success) = 4 lines.
    int lines = 0;
    for (char c : log)
        if (c == '\n') ++lines;
    CHECK(lines == 4);
    CHECK(log.find("p-0 attempt=1") != std::string::npos);
    CHECK(log.find("fail") != std::string::npos);
    CHECK(log.find("ok") != std::string::npos);
    CHECK(log.find("latency_ms=") != std::string::npos);
}

TEST_CASE("resumed runs skip finished pairs and produce identical output") {
    Dataset ds = labeling_dataset(40);
    DistributionMockClient mock(99, 0.726, 0.268, 0.006);
    RelabelPolicy policy;
    policy.max_in_flight = 4;

    LabelingRunStats full_stats;
    std::string full = run_to_string(mock, ds, policy, nullptr, &full_stats);
    CHECK(full_stats.skipped == 0);

    // Pretend the first half already finished in a previous run.
    auto schema = LabelSchema::three_class();
    auto first_run = relabel_dataset(mock, ds, schema, policy);
    std::map<std::string, PairExample> already;
    for (size_t i = 0; i < 20; ++i)
        already.emplace(first_run.dataset[i].id, first_run.dataset[i]);

    LabelingRunStats resumed_stats;
    std::string resumed = run_to_string(mock, ds, policy, &already, &resumed_stats);
    CHECK(resumed_stats.skipped == 20);
    CHECK(resumed_stats.successes() == 20);
    CHECK(resumed == full);
}

TEST_CASE("concurrent runs emit in dataset order deterministically") {
    Dataset ds = labeling_dataset(300);
    DistributionMockClient mock(7, 0.726, 0.268, 0.006);
    RelabelPolicy policy;
    policy.max_in_flight = 8;
    std::string a = run_to_string(mock, ds, policy);
    std::string b = run_to_string(mock, ds, policy);
    CHECK(a == b);

    // Order check: ids appear in dataset order.
    size_t pos = 0;
    for (const auto& ex : ds) {
        size_t found = a.find("\"" + ex.id + "\"", pos);
        REQUIRE(found != std::string::npos);
        pos = found;
    }
}

TEST_CASE("mock tier distribution tracks the configured fractions") {
    Dataset ds = labeling_dataset(2000);
    DistributionMockClient mock(1234, 0.726, 0.268, 0.006);
    RelabelPolicy policy;
    policy.max_in_flight = 8;
    auto result = relabel_dataset(mock, ds, LabelSchema::three_class(), policy);
    double n = 2000.0;
    CHECK(result.stats.high / n * 100.0 == doctest::Approx(72.6).epsilon(0.05));
    CHECK(result.stats.medium / n * 100.0 == doctest::Approx(26.8).epsilon(0.12));
    CHECK(result.stats.low / n * 100.0 == doctest::Approx(0.6).epsilon(2.0));
    // Deterministic per id: a second pass gives identical labels.
    auto again = relabel_dataset(mock, ds, LabelSchema::three_class(), policy);
    for (size_t i = 0; i < ds.size(); ++i) {
        CHECK(result.dataset[i].label == again.dataset[i].label);
        CHECK(result.dataset[i].confidence == again.dataset[i].confidence);
    }
}

} // TEST_SUITE
