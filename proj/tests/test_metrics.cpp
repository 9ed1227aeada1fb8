#include <doctest.h>

#include <vector>

#include "ctxsent/error.hpp"
#include "ctxsent/metrics.hpp"
#include "ctxsent/rng.hpp"

using namespace ctxsent;

namespace {

const std::vector<std::string> kNames3 = {"Negatif", "Netral", "Positif"};

// Independent oracle: metrics computed straight from the label vectors.
struct OracleReport {
    double accuracy = 0.0;
    std::vector<double> precision, recall, f1;
    std::vector<long long> support;
    double macro_f1 = 0.0, weighted_f1 = 0.0;
};

OracleReport oracle(const std::vector<int>& golds, const std::vector<int>& preds, int k) {
    OracleReport r;
    r.precision.assign(static_cast<size_t>(k), 0.0);
    r.recall.assign(static_cast<size_t>(k), 0.0);
    r.f1.assign(static_cast<size_t>(k), 0.0);
    r.support.assign(static_cast<size_t>(k), 0);

    long long correct = 0;
    for (size_t i = 0; i < golds.size(); ++i)
        if (golds[i] == preds[i]) ++correct;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(golds.size());

    long long total_support = 0;
    for (int c = 0; c < k; ++c) {
        long long tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < golds.size(); ++i) {
            bool g = golds[i] == c, p = preds[i] == c;
            if (g && p) ++tp;
            if (!g && p) ++fp;
            if (g && !p) ++fn;
        }
        auto sc = static_cast<size_t>(c);
        r.support[sc] = tp + fn;
        total_support += r.support[sc];
        r.precision[sc] = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        r.recall[sc] = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        double pr = r.precision[sc] + r.recall[sc];
        r.f1[sc] = pr > 0 ? 2.0 * r.precision[sc] * r.recall[sc] / pr : 0.0;
        r.macro_f1 += r.f1[sc] / k;
        r.weighted_f1 += r.f1[sc] * static_cast<double>(r.support[sc]);
    }
    r.weighted_f1 /= static_cast<double>(total_support);
    return r;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("confusion matrix layout is cell[gold][pred]") {
    std::vector<int> golds = {0, 0, 1, 2, 2, 2};
    std::vector<int> preds = {0, 1, 1, 2, 0, 2};
    auto m = confusion(golds, preds, kNames3);
    CHECK(m.total() == 6);
    CHECK(m.counts[0][0] == 1);
    CHECK(m.counts[0][1] == 1);
    CHECK(m.counts[1][1] == 1);
    CHECK(m.counts[2][0] == 1);
    CHECK(m.counts[2][2] == 2);
    CHECK(m.counts[1][0] == 0);
}

TEST_CASE("confusion rejects bad input") {
    CHECK_THROWS_AS(confusion({0, 1}, {0}, kNames3), ValidationError);
    CHECK_THROWS_AS(confusion({0, 3}, {0, 0}, kNames3), ValidationError);
    CHECK_THROWS_AS(confusion({0, -1}, {0, 0}, kNames3), ValidationError);
    CHECK_THROWS_AS(confusion({}, {}, kNames3), ValidationError);
}

TEST_CASE("hand-checked fixture: accuracy and per-class F1") {
    // 9 items. Class supports 3/3/3.
    std::vector<int> golds = {0, 0, 0, 1, 1, 1, 2, 2, 2};
    std::vector<int> preds = {0, 1, 2, 1, 1, 0, 2, 2, 1};
    auto rep = evaluate(confusion(golds, preds, kNames3));
    CHECK(rep.accuracy == doctest::Approx(5.0 / 9.0).epsilon(1e-12));
    // Class 0: tp=1 fp=1 fn=2 -> p=1/2 r=1/3 f1=0.4
    CHECK(rep.per_class[0].f1 == doctest::Approx(0.4).epsilon(1e-12));
    // Class 1: tp=2 fp=2 fn=1 -> p=1/2 r=2/3 f1=4/7
    CHECK(rep.per_class[1].f1 == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    // Class 2: tp=2 fp=1 fn=1 -> p=2/3 r=2/3 f1=2/3
    CHECK(rep.per_class[2].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    double macro = (0.4 + 4.0 / 7.0 + 2.0 / 3.0) / 3.0;
    CHECK(rep.macro_f1 == doctest::Approx(macro).epsilon(1e-12));
    // Supports are equal, so weighted == macro here.
    CHECK(rep.weighted_f1 == doctest::Approx(macro).epsilon(1e-12));
    for (const auto& c : rep.per_class) CHECK_FALSE(c.zero_support_flag);
}

TEST_CASE("zero-support class: 0/0 counts as 0 and is flagged, macro still over all classes") {
    // Nothing is gold Positif and nothing is predicted Positif.
    std::vector<int> golds = {0, 0, 1, 1};
    std::vector<int> preds = {0, 1, 1, 1};
    auto rep = evaluate(confusion(golds, preds, kNames3));
    CHECK(rep.per_class[2].support == 0);
    CHECK(rep.per_class[2].precision == 0.0);
    CHECK(rep.per_class[2].recall == 0.0);
    CHECK(rep.per_class[2].f1 == 0.0);
    CHECK(rep.per_class[2].zero_support_flag);
    // Class 0: p=1, r=1/2, f1=2/3. Class 1: p=2/3, r=1, f1=4/5.
    double macro = (2.0 / 3.0 + 4.0 / 5.0 + 0.0) / 3.0;
    CHECK(rep.macro_f1 == doctest::Approx(macro).epsilon(1e-12));
}

TEST_CASE("degenerate all-one-class prediction") {
    std::vector<int> golds = {0, 1, 2, 1};
    std::vector<int> preds = {1, 1, 1, 1};
    auto rep = evaluate(confusion(golds, preds, kNames3));
    CHECK(rep.accuracy == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.per_class[0].f1 == 0.0);
    CHECK(rep.per_class[0].zero_support_flag); // precision 0/0
    CHECK(rep.per_class[2].f1 == 0.0);
    CHECK(rep.per_class[1].precision == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.per_class[1].recall == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("randomized agreement with the brute-force oracle") {
    Rng rng(20240817);
    for (int iter = 0; iter < 1000; ++iter) {
        int k = 2 + static_cast<int>(rng.uniform_index(4)); // 2..5 classes
        int n = 1 + static_cast<int>(rng.uniform_index(60));
        std::vector<int> golds, preds;
        for (int i = 0; i < n; ++i) {
            golds.push_back(static_cast<int>(rng.uniform_index(static_cast<size_t>(k))));
            preds.push_back(static_cast<int>(rng.uniform_index(static_cast<size_t>(k))));
        }
        std::vector<std::string> names;
        for (int c = 0; c < k; ++c) names.push_back("k" + std::to_string(c));

        auto rep = evaluate(confusion(golds, preds, names));
        auto ora = oracle(golds, preds, k);

        CHECK(rep.accuracy == doctest::Approx(ora.accuracy).epsilon(1e-12));
        CHECK(rep.macro_f1 == doctest::Approx(ora.macro_f1).epsilon(1e-12));
        CHECK(rep.weighted_f1 == doctest::Approx(ora.weighted_f1).epsilon(1e-12));
        for (int c = 0; c < k; ++c) {
            auto sc = static_cast<size_t>(c);
            CHECK(rep.per_class[sc].precision == doctest::Approx(ora.precision[sc]).epsilon(1e-12));
            CHECK(rep.per_class[sc].recall == doctest::Approx(ora.recall[sc]).epsilon(1e-12));
            CHECK(rep.per_class[sc].f1 == doctest::Approx(ora.f1[sc]).epsilon(1e-12));
            CHECK(rep.per_class[sc].support == ora.support[sc]);
        }
    }
}

TEST_CASE("report renderings mark the best value per column") {
    std::vector<int> golds = {0, 0, 1, 1, 2, 2};
    auto good = evaluate(confusion(golds, {0, 0, 1, 1, 2, 2}, kNames3));
    good.classifier_name = "strong";
    auto bad = evaluate(confusion(golds, {1, 1, 1, 1, 1, 1}, kNames3));
    bad.classifier_name = "weak";
    std::vector<EvalReport> reports = {bad, good};

    auto md = render_report(reports, ReportFormat::markdown);
    CHECK(md.find("**1.000**") != std::string::npos);
    CHECK(md.find("strong") != std::string::npos);
    CHECK(md.find("weak") != std::string::npos);

    auto text = render_report(reports, ReportFormat::text);
    CHECK(text.find("1.000*") != std::string::npos);

    auto overall = render_overall_csv(reports);
    CHECK(overall.rfind("classifier,accuracy,f1_macro,f1_weighted", 0) == 0);
    CHECK(overall.find("strong,1.000,1.000,1.000") != std::string::npos);

    auto per_class = render_per_class_csv(reports);
    CHECK(per_class.rfind("classifier,class,precision,recall,f1,support", 0) == 0);
    CHECK(per_class.find("strong,Negatif,1.000,1.000,1.000,2") != std::string::npos);
}

TEST_CASE("zero-support classes are visibly flagged in reports") {
    std::vector<int> golds = {0, 0, 1, 1};
    auto rep = evaluate(confusion(golds, {0, 0, 1, 1}, kNames3));
    rep.classifier_name = "m";
    auto text = render_report({rep}, ReportFormat::text);
    CHECK(text.find("!") != std::string::npos);
}

} // TEST_SUITE
