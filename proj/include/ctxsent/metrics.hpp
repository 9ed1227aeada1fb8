#pragma once

#include <string>
#include <vector>

namespace ctxsent {

struct ConfusionMatrix {
    std::vector<std::string> class_names;
    // cell[gold][pred]
    std::vector<std::vector<long long>> counts;

    int num_classes() const { return static_cast<int>(class_names.size()); }
    long long total() const;
};

struct ClassMetrics {
    std::string class_name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long support = 0;
    bool zero_support_flag = false; // any 0/0 denominator hit for this class
};

struct EvalReport {
    std::string classifier_name;
    std::string dataset_id;
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    double macro_f1 = 0.0;    // unweighted mean over ALL schema classes
    double weighted_f1 = 0.0; // support-weighted mean
    ConfusionMatrix confusion;
    long long evaluated = 0;
    long long failed = 0; // pairs the classifier could not answer
    bool full_coverage() const { return failed == 0; }
};

ConfusionMatrix confusion(const std::vector<int>& golds, const std::vector<int>& preds,
                          const std::vector<std::string>& class_names);

// Precision/recall/F1 with the 0/0 -> 0 convention; each such case sets the
// class's zero_support_flag.
EvalReport evaluate(const ConfusionMatrix& matrix);

enum class ReportFormat { text, csv, markdown };

// One overall table (accuracy, macro-F1, weighted-F1) and one per-class F1
// table; the best value per column is marked; values rounded to 3 decimals.
// All reports must share one class schema.
std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format);

// CSV schemas used by render_report(csv) and by the CLI:
//   overall:   classifier,accuracy,f1_macro,f1_weighted
//   per-class: classifier,class,precision,recall,f1,support
std::string render_overall_csv(const std::vector<EvalReport>& reports);
std::string render_per_class_csv(const std::vector<EvalReport>& reports);

} // namespace ctxsent
