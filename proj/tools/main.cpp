// ctxsent: context-conditioned sentiment classification toolkit.
//
// One binary, subcommand style. All randomness flows from explicit --seed
// flags; commands with stochastic behavior refuse to run without one.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxsent/benchmark.hpp"
#include "ctxsent/data.hpp"
#include "ctxsent/error.hpp"
#include "ctxsent/labeling.hpp"
#include "ctxsent/metrics.hpp"
#include "ctxsent/model.hpp"
#include "ctxsent/tokenizer.hpp"
#include "ctxsent/train.hpp"

namespace fs = std::filesystem;
using namespace ctxsent;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

void echo_config(const std::string& path, const nlohmann::json& effective) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write config echo: " + path);
    out << effective.dump(2) << "\n";
}

Vocab vocab_for_checkpoint(const std::string& ckpt_path, const std::string& vocab_flag,
                           const LoadedCheckpoint& ckpt) {
    std::string path = vocab_flag;
    if (path.empty()) path = (fs::path(ckpt_path).parent_path() / "vocab.txt").string();
    Vocab vocab = Vocab::load(path);
    if (ckpt.meta.vocab_hash != 0 && vocab.content_hash() != ckpt.meta.vocab_hash)
        throw ValidationError("vocab file '" + path + "' does not match the checkpoint's vocabulary");
    return vocab;
}

std::vector<std::string> dataset_corpus(const Dataset& ds) {
    std::vector<std::string> corpus;
    corpus.reserve(ds.size() * 2);
    for (const auto& ex : ds) {
        corpus.push_back(ex.context);
        corpus.push_back(ex.text);
    }
    return corpus;
}

struct RegistryAdapter {
    std::unique_ptr<ClassifierAdapter> adapter;
    std::unique_ptr<Vocab> vocab; // keeps the reference alive for local adapters
};

RegistryAdapter make_registry_adapter(const nlohmann::json& entry, const LabelSchema& schema) {
    RegistryAdapter out;
    std::string type = entry.at("type").get<std::string>();
    std::string name = entry.at("name").get<std::string>();
    if (type == "local" || type == "context_blind") {
        auto ckpt = load_checkpoint(entry.at("checkpoint").get<std::string>());
        out.vocab = std::make_unique<Vocab>(Vocab::load(entry.at("vocab").get<std::string>()));
        if (ckpt.meta.vocab_hash != 0 && out.vocab->content_hash() != ckpt.meta.vocab_hash)
            throw ValidationError("adapter '" + name + "': vocab does not match checkpoint");
        if (type == "local")
            out.adapter = std::make_unique<LocalModelAdapter>(name, std::move(ckpt.model), *out.vocab);
        else
            out.adapter = std::make_unique<ContextBlindAdapter>(name, std::move(ckpt.model), *out.vocab);
    } else if (type == "http") {
        HttpAdapterConfig cfg;
        cfg.name = name;
        cfg.mode = entry.value("mode", std::string("context_free")) == "context_conditioned"
                       ? AdapterMode::context_conditioned
                       : AdapterMode::context_free;
        cfg.host = entry.at("host").get<std::string>();
        cfg.path = entry.value("path", cfg.path);
        cfg.health_path = entry.value("health_path", cfg.health_path);
        cfg.request_template = entry.value("request_template", std::string());
        cfg.timeout_seconds = entry.value("timeout_seconds", cfg.timeout_seconds);
        cfg.max_retries = entry.value("max_retries", cfg.max_retries);
        out.adapter = std::make_unique<HttpAdapter>(cfg, schema);
    } else {
        throw ValidationError("adapter registry: unknown type '" + type + "'");
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"Context-conditioned sentiment classification toolkit"};
    app.require_subcommand(1);
    app.set_config("--config")->envname("CTXSENT_CONFIG");

    std::string schema_name = "three_class";
    app.add_option("--schema", schema_name, "Label schema: three_class or binary")
        ->capture_default_str();

    // ---- stats ----
    auto* cmd_stats = app.add_subcommand("stats", "Dataset class/source statistics");
    std::string stats_data, stats_csv;
    cmd_stats->add_option("data", stats_data, "Dataset JSONL file")->required();
    cmd_stats->add_option("--csv", stats_csv, "Also write the stats as CSV");

    // ---- weights ----
    auto* cmd_weights = app.add_subcommand("weights", "Inverse-frequency class weights");
    std::string weights_data;
    cmd_weights->add_option("data", weights_data, "Dataset JSONL file")->required();

    // ---- split ----
    auto* cmd_split = app.add_subcommand("split", "Stratified train/holdout split");
    std::string split_data, split_train_out, split_holdout_out;
    double split_fraction = 0.15;
    uint64_t split_seed = 0;
    cmd_split->add_option("data", split_data, "Dataset JSONL file")->required();
    cmd_split->add_option("--fraction", split_fraction, "Holdout fraction")->capture_default_str();
    cmd_split->add_option("--seed", split_seed, "Shuffle seed")->required();
    cmd_split->add_option("--train-out", split_train_out, "Training-side output path");
    cmd_split->add_option("--holdout-out", split_holdout_out, "Holdout-side output path");

    // ---- to-binary ----
    auto* cmd_binary = app.add_subcommand("to-binary", "Drop Netral and remap to the binary schema");
    std::string binary_data, binary_out;
    cmd_binary->add_option("data", binary_data, "Three-class dataset JSONL file")->required();
    cmd_binary->add_option("--out", binary_out, "Output path");

    // ---- train ----
    auto* cmd_train = app.add_subcommand("train", "Train the encoder-classifier");
    std::string train_data, train_run_dir = "run", train_vocab;
    bool train_resume = false, train_uniform = false;
    TrainConfig tc;
    ModelConfig mc;
    uint64_t train_seed = 0;
    cmd_train->add_option("data", train_data, "Training dataset JSONL file")->required();
    cmd_train->add_option("--run-dir", train_run_dir, "Run directory")->capture_default_str();
    cmd_train->add_option("--seed", train_seed, "Split/shuffle/dropout/init seed")->required();
    cmd_train->add_option("--vocab", train_vocab, "Existing vocab file (else trained from data)");
    cmd_train->add_option("--vocab-size", mc.vocab_size, "Vocabulary size")->capture_default_str();
    cmd_train->add_option("--lr", tc.learning_rate, "Learning rate")->capture_default_str();
    cmd_train->add_option("--batch-size", tc.batch_size, "Batch size")->capture_default_str();
    cmd_train->add_option("--epochs", tc.max_epochs, "Max epochs")->capture_default_str();
    cmd_train->add_option("--patience", tc.patience, "Early-stopping patience")->capture_default_str();
    cmd_train->add_option("--val-fraction", tc.val_fraction, "Validation fraction")
        ->capture_default_str();
    cmd_train->add_option("--warmup-steps", tc.warmup_steps, "LR warmup steps")->capture_default_str();
    cmd_train->add_option("--weight-decay", tc.weight_decay, "AdamW weight decay")
        ->capture_default_str();
    cmd_train->add_flag("--uniform-weights", train_uniform, "Disable inverse-frequency weighting");
    cmd_train->add_option("--max-len", mc.max_len, "Max sequence length")->capture_default_str();
    cmd_train->add_option("--d-model", mc.d_model, "Model width")->capture_default_str();
    cmd_train->add_option("--n-heads", mc.n_heads, "Attention heads")->capture_default_str();
    cmd_train->add_option("--n-layers", mc.n_layers, "Encoder layers")->capture_default_str();
    cmd_train->add_option("--d-ff", mc.d_ff, "Feed-forward width")->capture_default_str();
    cmd_train->add_option("--dropout", mc.dropout, "Dropout rate")->capture_default_str();
    cmd_train->add_flag("--resume", train_resume, "Continue from the run directory's last checkpoint");

    // ---- eval ----
    auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_vocab, eval_out_prefix, eval_name = "local-model";
    cmd_eval->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required();
    cmd_eval->add_option("data", eval_data, "Dataset JSONL file")->required();
    cmd_eval->add_option("--vocab", eval_vocab, "Vocab file (default: vocab.txt next to checkpoint)");
    cmd_eval->add_option("--name", eval_name, "Classifier name in the report")->capture_default_str();
    cmd_eval->add_option("--out-prefix", eval_out_prefix, "Write <prefix>.txt/.csv reports");

    // ---- compare ----
    auto* cmd_compare = app.add_subcommand("compare", "Head-to-head adapter comparison");
    std::string compare_registry, compare_data, compare_cache, compare_out_prefix;
    cmd_compare->add_option("registry", compare_registry, "Adapter registry JSON file")->required();
    cmd_compare->add_option("data", compare_data, "Dataset JSONL file")->required();
    cmd_compare->add_option("--cache-dir", compare_cache, "Prediction cache directory");
    cmd_compare->add_option("--out-prefix", compare_out_prefix, "Write <prefix>.md/.csv outputs");

    // ---- label ----
    auto* cmd_label = app.add_subcommand("label", "Relabel a dataset via the labeling client");
    std::string label_data, label_out, label_audit, label_host, label_model, label_prompt_file;
    bool label_mock = false;
    uint64_t label_seed = 0;
    bool label_seed_given = false;
    RelabelPolicy policy;
    double tier_high = 72.6, tier_medium = 26.8, tier_low = 0.6;
    cmd_label->add_option("data", label_data, "Dataset JSONL file")->required();
    cmd_label->add_option("--out", label_out, "Output path (resumable)")->required();
    cmd_label->add_flag("--mock", label_mock, "Use the offline deterministic mock client");
    cmd_label->add_option("--seed", label_seed, "Mock client seed")
        ->each([&](const std::string&) { label_seed_given = true; });
    cmd_label->add_option("--endpoint", label_host, "Remote endpoint, e.g. http://host:port");
    cmd_label->add_option("--model", label_model, "Remote model identifier");
    cmd_label->add_option("--prompt-template", label_prompt_file, "Prompt template asset file");
    cmd_label->add_option("--max-retries", policy.max_retries)->capture_default_str();
    cmd_label->add_option("--backoff-ms", policy.backoff_base_ms)->capture_default_str();
    cmd_label->add_option("--max-in-flight", policy.max_in_flight)->capture_default_str();
    cmd_label->add_option("--abort-fraction", policy.abort_failure_fraction)->capture_default_str();
    cmd_label->add_option("--audit", label_audit, "Audit log path");
    cmd_label->add_option("--tier-high", tier_high, "Mock high-confidence %")->capture_default_str();
    cmd_label->add_option("--tier-medium", tier_medium, "Mock medium-confidence %")
        ->capture_default_str();
    cmd_label->add_option("--tier-low", tier_low, "Mock low-confidence %")->capture_default_str();

    // ---- synth ----
    auto* cmd_synth = app.add_subcommand("synth", "Generate the synthetic context-dependence corpus");
    std::string synth_out = "synthetic.jsonl", synth_spec_file;
    int synth_total = 3000;
    double synth_flip = 0.5, synth_filler = 0.1;
    uint64_t synth_seed = 0;
    cmd_synth->add_option("--out", synth_out, "Output path")->capture_default_str();
    cmd_synth->add_option("--spec", synth_spec_file, "Custom topic spec JSON");
    cmd_synth->add_option("--total", synth_total, "Total examples")->capture_default_str();
    cmd_synth->add_option("--flip-fraction", synth_flip, "Flip-pair fraction")->capture_default_str();
    cmd_synth->add_option("--filler-rate", synth_filler, "Neutral filler rate")->capture_default_str();
    cmd_synth->add_option("--seed", synth_seed, "Generator seed")->required();

    // ---- predict ----
    auto* cmd_predict = app.add_subcommand("predict", "Classify one (context, text) pair");
    std::string pred_ckpt, pred_vocab, pred_context, pred_text;
    cmd_predict->add_option("checkpoint", pred_ckpt, "Checkpoint file")->required();
    cmd_predict->add_option("--vocab", pred_vocab, "Vocab file");
    cmd_predict->add_option("--context", pred_context, "Topic context")->required();
    cmd_predict->add_option("--text", pred_text, "Text to classify")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    LabelSchema schema = LabelSchema::by_name(schema_name);

    if (*cmd_stats) {
        auto ds = load_dataset_file(stats_data, schema);
        auto stats = compute_stats(ds, schema);
        std::cout << render_stats_text(stats);
        if (!stats_csv.empty()) {
            std::ofstream out(stats_csv, std::ios::binary);
            out << render_stats_csv(stats);
        }
    } else if (*cmd_weights) {
        auto ds = load_dataset_file(weights_data, schema);
        auto w = class_weights(compute_stats(ds, schema), schema);
        std::cout << render_weights_text(w);
    } else if (*cmd_split) {
        auto ds = load_dataset_file(split_data, schema);
        auto [train_side, holdout] = stratified_split(ds, schema, split_fraction, split_seed);
        if (split_train_out.empty()) split_train_out = split_data + ".train.jsonl";
        if (split_holdout_out.empty()) split_holdout_out = split_data + ".holdout.jsonl";
        save_dataset_file(train_side, schema, split_train_out);
        save_dataset_file(holdout, schema, split_holdout_out);
        echo_config(split_train_out + ".config.json",
                    {{"command", "split"}, {"data", split_data}, {"fraction", split_fraction},
                     {"seed", split_seed}, {"schema", schema.name()}});
        std::cout << "train: " << train_side.size() << " -> " << split_train_out << "\n"
                  << "holdout: " << holdout.size() << " -> " << split_holdout_out << "\n";
    } else if (*cmd_binary) {
        auto ds = load_dataset_file(binary_data, LabelSchema::three_class());
        bool empty_warning = false;
        auto bin = to_binary(ds, &empty_warning);
        if (empty_warning) std::cerr << "warning: binary remap produced an empty dataset\n";
        if (binary_out.empty()) binary_out = binary_data + ".binary.jsonl";
        save_dataset_file(bin, LabelSchema::binary(), binary_out);
        std::cout << bin.size() << " examples -> " << binary_out << "\n";
    } else if (*cmd_train) {
        tc.seed = train_seed;
        tc.class_weight_mode = train_uniform ? WeightMode::uniform : WeightMode::inverse_frequency;
        mc.n_classes = schema.num_classes();
        mc.init_seed = train_seed;
        auto ds = load_dataset_file(train_data, schema);

        fs::create_directories(train_run_dir);
        Vocab vocab = [&] {
            if (!train_vocab.empty()) return Vocab::load(train_vocab);
            std::string cached = train_run_dir + "/vocab.txt";
            if (train_resume && fs::exists(cached)) return Vocab::load(cached);
            return Vocab::train(dataset_corpus(ds), mc.vocab_size);
        }();
        vocab.save(train_run_dir + "/vocab.txt");
        mc.vocab_size = vocab.size();

        TrainResult result = train_resume
                                 ? resume(train_run_dir, vocab, ds, schema, tc)
                                 : train(mc, vocab, ds, schema, tc, train_run_dir);
        std::cout << "best epoch " << result.report.best_epoch << ", stop reason "
                  << (result.report.stop_reason == StopReason::early_stop ? "early_stop"
                                                                          : "max_epochs")
                  << "\n";
        for (const auto& e : result.report.epochs)
            std::cout << "epoch " << e.epoch << ": loss " << e.train_loss << ", val F1 "
                      << e.val_f1_macro << ", val acc " << e.val_accuracy << "\n";
    } else if (*cmd_eval) {
        auto ckpt = load_checkpoint(eval_ckpt);
        if (ckpt.model.config.n_classes != schema.num_classes())
            throw ValidationError("checkpoint n_classes does not match --schema");
        Vocab vocab = vocab_for_checkpoint(eval_ckpt, eval_vocab, ckpt);
        auto ds = load_dataset_file(eval_data, schema);
        LocalModelAdapter adapter(eval_name, std::move(ckpt.model), vocab);
        EvalReport rep = evaluate_adapter(adapter, ds, schema);
        std::vector<EvalReport> reports = {rep};
        std::cout << render_report(reports, ReportFormat::text);
        if (!eval_out_prefix.empty()) {
            std::ofstream(eval_out_prefix + ".txt", std::ios::binary)
                << render_report(reports, ReportFormat::text);
            std::ofstream(eval_out_prefix + ".overall.csv", std::ios::binary)
                << render_overall_csv(reports);
            std::ofstream(eval_out_prefix + ".per_class.csv", std::ios::binary)
                << render_per_class_csv(reports);
            echo_config(eval_out_prefix + ".config.json",
                        {{"command", "eval"}, {"checkpoint", eval_ckpt}, {"data", eval_data},
                         {"schema", schema.name()}});
        }
    } else if (*cmd_compare) {
        std::ifstream reg_in(compare_registry, std::ios::binary);
        if (!reg_in) throw RuntimeFailure("cannot open adapter registry: " + compare_registry);
        nlohmann::json registry = nlohmann::json::parse(reg_in);
        auto ds = load_dataset_file(compare_data, schema);

        std::vector<RegistryAdapter> holders;
        std::vector<ClassifierAdapter*> adapters;
        for (const auto& entry : registry.at("adapters")) {
            holders.push_back(make_registry_adapter(entry, schema));
            adapters.push_back(holders.back().adapter.get());
        }
        ComparisonResult cmp = compare(adapters, ds, schema, compare_cache);
        std::cout << cmp.markdown << "\n" << cmp.flip_csv;
        if (!compare_out_prefix.empty()) {
            std::ofstream(compare_out_prefix + ".md", std::ios::binary) << cmp.markdown;
            std::ofstream(compare_out_prefix + ".overall.csv", std::ios::binary) << cmp.overall_csv;
            std::ofstream(compare_out_prefix + ".per_class.csv", std::ios::binary)
                << cmp.per_class_csv;
            std::ofstream(compare_out_prefix + ".flip.csv", std::ios::binary) << cmp.flip_csv;
            echo_config(compare_out_prefix + ".config.json",
                        {{"command", "compare"}, {"registry", compare_registry},
                         {"data", compare_data}, {"schema", schema.name()},
                         {"cache_dir", compare_cache}});
        }
    } else if (*cmd_label) {
        auto ds = load_dataset_file(label_data, schema);
        if (!label_prompt_file.empty()) {
            std::ifstream in(label_prompt_file, std::ios::binary);
            if (!in) throw RuntimeFailure("cannot open prompt template: " + label_prompt_file);
            std::ostringstream ss;
            ss << in.rdbuf();
            policy.prompt_template = ss.str();
        }

        std::unique_ptr<LabelClient> client;
        if (label_mock) {
            if (!label_seed_given)
                throw ValidationError("label --mock requires an explicit --seed");
            client = std::make_unique<DistributionMockClient>(label_seed, tier_high / 100.0,
                                                              tier_medium / 100.0, tier_low / 100.0);
        } else {
            if (label_host.empty())
                throw ValidationError("label requires --endpoint (or --mock)");
            HttpLabelConfig hc;
            hc.host = label_host;
            hc.model = label_model;
            if (const char* key = std::getenv("CTXSENT_API_KEY")) hc.api_key = key;
            client = std::make_unique<HttpLabelClient>(hc, schema);
        }

        // Resume: pairs already present in the output file are skipped.
        std::map<std::string, PairExample> already;
        if (fs::exists(label_out))
            for (auto& ex : load_dataset_file(label_out, schema)) already.emplace(ex.id, ex);

        std::ofstream out(label_out, std::ios::binary | (already.empty() ? std::ios::trunc : std::ios::app));
        std::ofstream audit;
        if (!label_audit.empty()) audit.open(label_audit, std::ios::binary | std::ios::app);

        Dataset pending;
        for (const auto& ex : ds)
            if (!already.count(ex.id)) pending.push_back(ex);

        auto result = relabel_dataset(
            *client, pending, schema, policy, nullptr,
            [&](const PairExample& ex) {
                out << example_to_json(ex, schema).dump() << "\n";
                out.flush();
            },
            audit.is_open() ? &audit : nullptr);

        echo_config(label_out + ".config.json",
                    {{"command", "label"}, {"data", label_data}, {"mock", label_mock},
                     {"seed", label_seed}, {"schema", schema.name()},
                     {"tiers", {tier_high, tier_medium, tier_low}},
                     {"max_retries", policy.max_retries},
                     {"max_in_flight", policy.max_in_flight}});
        const auto& s = result.stats;
        std::cout << "labeled " << s.successes() << " (high " << s.high << ", medium " << s.medium
                  << ", low " << s.low << "), failures " << s.failures << ", retries " << s.retries
                  << ", skipped " << already.size() << "\n";
    } else if (*cmd_synth) {
        SyntheticSpec spec = default_synthetic_spec();
        if (!synth_spec_file.empty()) {
            std::ifstream in(synth_spec_file, std::ios::binary);
            if (!in) throw RuntimeFailure("cannot open spec file: " + synth_spec_file);
            nlohmann::json j = nlohmann::json::parse(in);
            spec.topics.clear();
            for (const auto& t : j.at("topics")) {
                TopicSpec ts;
                ts.topic_id = t.at("topic_id").get<std::string>();
                ts.context = t.at("context").get<std::string>();
                for (const auto& [cue, label] : t.at("cues").items())
                    ts.cues.emplace_back(cue, label.get<int>());
                spec.topics.push_back(std::move(ts));
            }
        }
        spec.total_examples = synth_total;
        spec.flip_fraction = synth_flip;
        spec.neutral_filler_rate = synth_filler;
        spec.seed = synth_seed;
        Dataset ds = generate_synthetic(spec);
        save_dataset_file(ds, LabelSchema::three_class(), synth_out);
        echo_config(synth_out + ".config.json",
                    {{"command", "synth"}, {"total", synth_total}, {"flip_fraction", synth_flip},
                     {"filler_rate", synth_filler}, {"seed", synth_seed},
                     {"spec_file", synth_spec_file}});
        std::cout << ds.size() << " examples -> " << synth_out << "\n";
    } else if (*cmd_predict) {
        auto ckpt = load_checkpoint(pred_ckpt);
        Vocab vocab = vocab_for_checkpoint(pred_ckpt, pred_vocab, ckpt);
        LabelSchema model_schema =
            ckpt.model.config.n_classes == 2 ? LabelSchema::binary() : LabelSchema::three_class();
        Prediction p = predict(ckpt.model, vocab, pred_context, pred_text);
        std::cout << "label: " << model_schema.class_name(p.label) << "\n";
        for (int i = 0; i < model_schema.num_classes(); ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", p.probs[static_cast<size_t>(i)]);
            std::cout << "  " << model_schema.class_name(i) << ": " << buf << "\n";
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
