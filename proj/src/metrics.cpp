#include "ctxsent/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "ctxsent/error.hpp"

namespace ctxsent {

long long ConfusionMatrix::total() const {
    long long t = 0;
    for (const auto& row : counts)
        for (long long c : row) t += c;
    return t;
}

ConfusionMatrix confusion(const std::vector<int>& golds, const std::vector<int>& preds,
                          const std::vector<std::string>& class_names) {
    if (golds.size() != preds.size())
        throw ValidationError("confusion: golds and preds differ in length");
    if (golds.empty()) throw ValidationError("confusion: empty input");
    int k = static_cast<int>(class_names.size());
    ConfusionMatrix m;
    m.class_names = class_names;
    m.counts.assign(static_cast<size_t>(k), std::vector<long long>(static_cast<size_t>(k), 0));
    for (size_t i = 0; i < golds.size(); ++i) {
        int g = golds[i], p = preds[i];
        if (g < 0 || g >= k || p < 0 || p >= k)
            throw ValidationError("confusion: class index out of range at position " + std::to_string(i));
        m.counts[static_cast<size_t>(g)][static_cast<size_t>(p)] += 1;
    }
    return m;
}

EvalReport evaluate(const ConfusionMatrix& matrix) {
    long long total = matrix.total();
    if (total <= 0) throw ValidationError("evaluate: empty confusion matrix");
    int k = matrix.num_classes();

    EvalReport rep;
    rep.confusion = matrix;
    rep.evaluated = total;

    long long trace = 0;
    double f1_sum = 0.0, f1_weighted_sum = 0.0;
    for (int c = 0; c < k; ++c) {
        long long tp = matrix.counts[static_cast<size_t>(c)][static_cast<size_t>(c)];
        long long fp = 0, fn = 0, support = 0;
        for (int o = 0; o < k; ++o) {
            if (o != c) {
                fp += matrix.counts[static_cast<size_t>(o)][static_cast<size_t>(c)];
                fn += matrix.counts[static_cast<size_t>(c)][static_cast<size_t>(o)];
            }
            support += matrix.counts[static_cast<size_t>(c)][static_cast<size_t>(o)];
        }
        trace += tp;

        ClassMetrics cm;
        cm.class_name = matrix.class_names[static_cast<size_t>(c)];
        cm.support = support;
        if (tp + fp == 0) cm.zero_support_flag = true; else cm.precision = static_cast<double>(tp) / (tp + fp);
        if (tp + fn == 0) cm.zero_support_flag = true; else cm.recall = static_cast<double>(tp) / (tp + fn);
        if (cm.precision + cm.recall == 0.0) {
            cm.f1 = 0.0;
            if (tp + fp == 0 || tp + fn == 0) cm.zero_support_flag = true;
        } else {
            cm.f1 = 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
        }
        f1_sum += cm.f1;
        f1_weighted_sum += cm.f1 * static_cast<double>(support);
        rep.per_class.push_back(std::move(cm));
    }
    rep.accuracy = static_cast<double>(trace) / static_cast<double>(total);
    rep.macro_f1 = f1_sum / k;
    rep.weighted_f1 = f1_weighted_sum / static_cast<double>(total);
    return rep;
}

namespace {

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

void check_shared_schema(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ValidationError("render_report: no reports");
    const auto& names = reports.front().confusion.class_names;
    for (const auto& r : reports)
        if (r.confusion.class_names != names)
            throw ValidationError("render_report: reports carry mixed label schemas");
}

// Index of the best (maximum) value per column, ties to the first report.
template <typename Getter>
size_t best_index(const std::vector<EvalReport>& reports, Getter get) {
    size_t best = 0;
    for (size_t i = 1; i < reports.size(); ++i)
        if (get(reports[i]) > get(reports[best])) best = i;
    return best;
}

} // namespace

std::string render_overall_csv(const std::vector<EvalReport>& reports) {
    check_shared_schema(reports);
    std::ostringstream os;
    os << "classifier,accuracy,f1_macro,f1_weighted\n";
    for (const auto& r : reports)
        os << r.classifier_name << "," << fmt3(r.accuracy) << "," << fmt3(r.macro_f1) << ","
           << fmt3(r.weighted_f1) << "\n";
    return os.str();
}

std::string render_per_class_csv(const std::vector<EvalReport>& reports) {
    check_shared_schema(reports);
    std::ostringstream os;
    os << "classifier,class,precision,recall,f1,support\n";
    for (const auto& r : reports)
        for (const auto& c : r.per_class)
            os << r.classifier_name << "," << c.class_name << "," << fmt3(c.precision) << ","
               << fmt3(c.recall) << "," << fmt3(c.f1) << "," << c.support << "\n";
    return os.str();
}

std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format) {
    check_shared_schema(reports);
    if (format == ReportFormat::csv)
        return render_overall_csv(reports) + "\n" + render_per_class_csv(reports);

    size_t best_acc = best_index(reports, [](const EvalReport& r) { return r.accuracy; });
    size_t best_macro = best_index(reports, [](const EvalReport& r) { return r.macro_f1; });
    size_t best_wtd = best_index(reports, [](const EvalReport& r) { return r.weighted_f1; });

    const auto& class_names = reports.front().confusion.class_names;
    std::vector<size_t> best_class(class_names.size());
    for (size_t c = 0; c < class_names.size(); ++c)
        best_class[c] = best_index(reports, [c](const EvalReport& r) { return r.per_class[c].f1; });

    bool md = format == ReportFormat::markdown;
    auto mark = [md](const std::string& v, bool best) {
        if (!best) return v;
        return md ? "**" + v + "**" : v + "*";
    };

    std::ostringstream os;
    if (md) {
        os << "| Classifier | Accuracy | F1 Macro | F1 Wtd. |\n";
        os << "|---|---|---|---|\n";
        for (size_t i = 0; i < reports.size(); ++i) {
            const auto& r = reports[i];
            os << "| " << r.classifier_name << " | " << mark(fmt3(r.accuracy), i == best_acc)
               << " | " << mark(fmt3(r.macro_f1), i == best_macro) << " | "
               << mark(fmt3(r.weighted_f1), i == best_wtd) << " |";
            if (!r.full_coverage()) os << " (coverage " << r.evaluated << "/" << r.evaluated + r.failed << ")";
            os << "\n";
        }
        os << "\n| Classifier |";
        for (const auto& n : class_names) os << " " << n << " |";
        os << "\n|---|";
        for (size_t c = 0; c < class_names.size(); ++c) os << "---|";
        os << "\n";
        for (size_t i = 0; i < reports.size(); ++i) {
            os << "| " << reports[i].classifier_name << " |";
            for (size_t c = 0; c < class_names.size(); ++c) {
                os << " " << mark(fmt3(reports[i].per_class[c].f1), i == best_class[c]);
                if (reports[i].per_class[c].zero_support_flag) os << " (zero-support)";
                os << " |";
            }
            os << "\n";
        }
    } else {
        os << "Classifier                     Accuracy  F1 Macro  F1 Wtd.\n";
        for (size_t i = 0; i < reports.size(); ++i) {
            const auto& r = reports[i];
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%-30s %-9s %-9s %-9s", r.classifier_name.c_str(),
                          mark(fmt3(r.accuracy), i == best_acc).c_str(),
                          mark(fmt3(r.macro_f1), i == best_macro).c_str(),
                          mark(fmt3(r.weighted_f1), i == best_wtd).c_str());
            os << buf;
            if (!r.full_coverage()) os << " (coverage " << r.evaluated << "/" << r.evaluated + r.failed << ")";
            os << "\n";
        }
        os << "\nPer-class F1\n";
        os << "Classifier                    ";
        for (const auto& n : class_names) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), " %-12s", n.c_str());
            os << buf;
        }
        os << "\n";
        for (size_t i = 0; i < reports.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%-30s", reports[i].classifier_name.c_str());
            os << buf;
            for (size_t c = 0; c < class_names.size(); ++c) {
                std::string cell = mark(fmt3(reports[i].per_class[c].f1), i == best_class[c]);
                if (reports[i].per_class[c].zero_support_flag) cell += "!";
                std::snprintf(buf, sizeof(buf), " %-12s", cell.c_str());
                os << buf;
            }
            os << "\n";
        }
    }
    return os.str();
}

} // namespace ctxsent
