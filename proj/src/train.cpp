#include "ctxsent/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ctxsent/error.hpp"
#include "ctxsent/metrics.hpp"

namespace ctxsent {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ValidationError("train config: learning_rate must be positive");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (max_epochs < 1) throw ValidationError("train config: max_epochs must be >= 1");
    if (patience < 1) throw ValidationError("train config: patience must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ValidationError("train config: val_fraction must be in (0,1)");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"val_fraction", val_fraction},
            {"class_weight_mode", class_weight_mode == WeightMode::uniform ? "uniform" : "inverse_frequency"},
            {"seed", seed},
            {"warmup_steps", warmup_steps},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"weight_decay", weight_decay}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.val_fraction = j.at("val_fraction").get<double>();
    c.class_weight_mode = j.at("class_weight_mode").get<std::string>() == "uniform"
                              ? WeightMode::uniform
                              : WeightMode::inverse_frequency;
    c.seed = j.at("seed").get<uint64_t>();
    c.warmup_steps = j.at("warmup_steps").get<int>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    return c;
}

bool EarlyStopper::observe(int epoch, double f1) {
    if (f1 > best_f1_ + 1e-6) {
        best_f1_ = f1;
        best_epoch_ = epoch;
        since_ = 0;
        improved_last_ = true;
        return false;
    }
    improved_last_ = false;
    since_ += 1;
    return since_ >= patience_;
}

void EarlyStopper::restore(double best_f1, int best_epoch, int since) {
    best_f1_ = best_f1;
    best_epoch_ = best_epoch;
    since_ = since;
}

std::vector<int> predict_labels(Model& model, const std::vector<Encoding>& encodings,
                                int batch_size) {
    std::vector<int> out;
    out.reserve(encodings.size());
    for (size_t start = 0; start < encodings.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(encodings.size(), start + static_cast<size_t>(batch_size));
        std::vector<Encoding> batch(encodings.begin() + static_cast<long>(start),
                                    encodings.begin() + static_cast<long>(end));
        Tensor logits = forward(model, batch);
        for (int i = 0; i < logits.rows(); ++i) {
            int arg = 0;
            for (int j = 1; j < logits.cols(); ++j)
                if (logits(i, j) > logits(i, arg)) arg = j;
            out.push_back(arg);
        }
    }
    return out;
}

namespace {

struct LoopInput {
    Model model;                 // current model state
    Model best_model;            // best-so-far
    std::vector<nn::AdamState> opt;
    long opt_step = 0;
    int start_epoch = 0;         // last completed epoch
    TrainReport report;
    double best_f1 = -1.0;
    int since = 0;
    bool already_stopped = false;
    StopReason stop_reason = StopReason::max_epochs;
};

std::string stop_reason_str(StopReason r) {
    return r == StopReason::early_stop ? "early_stop" : "max_epochs";
}

StopReason stop_reason_parse(const std::string& s) {
    return s == "early_stop" ? StopReason::early_stop : StopReason::max_epochs;
}

void write_metrics_csv(const std::string& run_dir, const TrainReport& report) {
    std::ofstream out(run_dir + "/metrics.csv", std::ios::binary);
    out << "epoch,train_loss,val_f1_macro,val_accuracy\n";
    char buf[128];
    for (const auto& e : report.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss,
                      e.val_f1_macro, e.val_accuracy);
        out << buf;
    }
}

CheckpointMeta make_last_meta(uint64_t vocab_hash, const TrainConfig& cfg, const LoopInput& st,
                              int epoch, bool stopped, StopReason reason) {
    CheckpointMeta meta;
    meta.vocab_hash = vocab_hash;
    meta.epoch = epoch;
    meta.best_val_f1 = st.best_f1;
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : st.report.epochs)
        epochs.push_back({e.epoch, e.train_loss, e.val_f1_macro, e.val_accuracy});
    meta.extra["train_state"] = {{"best_epoch", st.report.best_epoch},
                                 {"best_f1", st.best_f1},
                                 {"since", st.since},
                                 {"opt_step", st.opt_step},
                                 {"epochs", epochs},
                                 {"stopped", stopped},
                                 {"stop_reason", stop_reason_str(reason)},
                                 {"train_config", cfg.to_json()}};
    return meta;
}

TrainResult run_loop(LoopInput st, const Vocab& vocab, const Dataset& dataset,
                     const LabelSchema& schema, const TrainConfig& cfg,
                     const std::string& run_dir) {
    auto t0 = std::chrono::steady_clock::now();
    uint64_t vocab_hash = vocab.content_hash();

    std::ofstream log;
    if (!run_dir.empty()) {
        fs::create_directories(run_dir);
        // Effective config snapshot before any work.
        std::ofstream cfg_out(run_dir + "/config.json", std::ios::binary);
        cfg_out << nlohmann::json{{"train_config", cfg.to_json()},
                                  {"model_config", st.model.config.to_json()},
                                  {"schema", schema.name()},
                                  {"vocab_hash", vocab_hash}}
                       .dump(2)
                << "\n";
        log.open(run_dir + "/train.log", std::ios::binary | std::ios::app);
    }

    if (st.already_stopped) {
        TrainResult res{std::move(st.best_model), std::move(st.report)};
        res.report.stop_reason = st.stop_reason;
        return res;
    }

    auto [train_side, val_side] = stratified_split(dataset, schema, cfg.val_fraction, cfg.seed);

    // Class weights come from the training side only.
    std::vector<double> weights(static_cast<size_t>(schema.num_classes()), 1.0);
    if (cfg.class_weight_mode == WeightMode::inverse_frequency)
        weights = class_weights(compute_stats(train_side, schema), schema).values();

    int max_len = st.model.config.max_len;
    std::vector<Encoding> train_enc, val_enc;
    std::vector<int> train_labels, val_labels;
    for (const auto& ex : train_side) {
        train_enc.push_back(encode_pair(vocab, ex.context, ex.text, max_len));
        train_labels.push_back(ex.label);
    }
    for (const auto& ex : val_side) {
        val_enc.push_back(encode_pair(vocab, ex.context, ex.text, max_len));
        val_labels.push_back(ex.label);
    }

    EarlyStopper stopper(cfg.patience);
    if (st.start_epoch > 0) stopper.restore(st.best_f1, st.report.best_epoch, st.since);

    auto params = st.model.parameters();
    if (st.opt.empty())
        for (Parameter* p : params) st.opt.emplace_back(p->value);
    for (auto& s : st.opt) s.step = st.opt_step;

    auto save_last = [&](int epoch_done, bool done, StopReason reason) {
        std::map<std::string, Tensor> extra;
        for (size_t pi = 0; pi < params.size(); ++pi) {
            extra.emplace("opt/m/" + params[pi]->name, st.opt[pi].m);
            extra.emplace("opt/v/" + params[pi]->name, st.opt[pi].v);
        }
        save_checkpoint(st.model, make_last_meta(vocab_hash, cfg, st, epoch_done, done, reason),
                        run_dir + "/last.ckpt", extra);
    };

    // An epoch-0 checkpoint makes a run resumable before any step has run.
    if (!run_dir.empty() && st.start_epoch == 0)
        save_last(0, false, StopReason::max_epochs);

    bool stopped_early = false;
    int epoch = st.start_epoch;
    for (epoch = st.start_epoch + 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 1000 + static_cast<uint64_t>(epoch)));
        Rng drop_rng(derive_seed(cfg.seed, 2000 + static_cast<uint64_t>(epoch)));

        std::vector<size_t> order(train_enc.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<Encoding> batch;
            std::vector<int> labels;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(train_enc[order[i]]);
                labels.push_back(train_labels[order[i]]);
            }

            ForwardCache cache;
            Tensor logits = forward(st.model, batch, true, &drop_rng, &cache);
            nn::WceResult wce;
            try {
                wce = nn::weighted_cross_entropy(logits, labels, weights);
            } catch (const RuntimeFailure& e) {
                throw RuntimeFailure("epoch " + std::to_string(epoch) + ", batch at offset " +
                                     std::to_string(start) + ": " + e.what());
            }
            loss_sum += wce.loss * static_cast<double>(batch.size());

            st.model.zero_grads();
            backward(st.model, cache, wce.dlogits);

            st.opt_step += 1;
            nn::AdamConfig oc;
            oc.lr = cfg.learning_rate;
            if (cfg.warmup_steps > 0 && st.opt_step < cfg.warmup_steps)
                oc.lr *= static_cast<double>(st.opt_step) / cfg.warmup_steps;
            oc.beta1 = cfg.beta1;
            oc.beta2 = cfg.beta2;
            oc.eps = cfg.adam_eps;
            oc.weight_decay = cfg.weight_decay;
            for (size_t pi = 0; pi < params.size(); ++pi)
                nn::adamw_step(*params[pi], st.opt[pi], oc);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_enc.size());

        std::vector<int> preds = predict_labels(st.model, val_enc);
        EvalReport ev = evaluate(confusion(val_labels, preds, schema.classes()));
        rec.val_f1_macro = ev.macro_f1;
        rec.val_accuracy = ev.accuracy;
        st.report.epochs.push_back(rec);

        bool stop = stopper.observe(epoch, rec.val_f1_macro);
        if (stopper.improved_last()) {
            st.best_model = st.model;
            st.report.best_epoch = epoch;
            st.best_f1 = stopper.best_f1();
        }
        st.since = stopper.epochs_since_improvement();

        if (log.is_open()) {
            log << "epoch " << epoch << " loss " << rec.train_loss << " val_f1 " << rec.val_f1_macro
                << " val_acc " << rec.val_accuracy << (stopper.improved_last() ? " *" : "") << "\n";
            log.flush();
        }

        if (!run_dir.empty()) {
            write_metrics_csv(run_dir, st.report);
            if (stopper.improved_last()) {
                CheckpointMeta best_meta;
                best_meta.vocab_hash = vocab_hash;
                best_meta.epoch = epoch;
                best_meta.best_val_f1 = st.best_f1;
                save_checkpoint(st.best_model, best_meta, run_dir + "/best.ckpt");
            }
            bool done = stop || epoch == cfg.max_epochs;
            save_last(epoch, done, stop ? StopReason::early_stop : StopReason::max_epochs);
        }

        if (stop) {
            stopped_early = true;
            break;
        }
    }

    st.report.stop_reason = stopped_early ? StopReason::early_stop : StopReason::max_epochs;
    if (st.report.best_epoch == 0) {
        // No epoch improved over the restored best; the retained model stands.
        st.report.best_epoch = stopper.best_epoch();
    }
    st.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (log.is_open())
        log << "done: " << stop_reason_str(st.report.stop_reason) << ", best epoch "
            << st.report.best_epoch << "\n";

    return TrainResult{std::move(st.best_model), std::move(st.report)};
}

} // namespace

TrainResult train(const ModelConfig& model_config, const Vocab& vocab, const Dataset& dataset,
                  const LabelSchema& schema, const TrainConfig& config,
                  const std::string& run_dir) {
    config.validate();
    if (model_config.n_classes != schema.num_classes())
        throw ValidationError("train: model n_classes does not match schema");
    LoopInput st;
    st.model = init_model(model_config);
    st.best_model = st.model;
    return run_loop(std::move(st), vocab, dataset, schema, config, run_dir);
}

TrainResult resume(const std::string& run_dir, const Vocab& vocab, const Dataset& dataset,
                   const LabelSchema& schema, const TrainConfig& config) {
    config.validate();
    LoadedCheckpoint last = load_checkpoint(run_dir + "/last.ckpt");
    if (last.meta.vocab_hash != vocab.content_hash())
        throw ValidationError("resume: vocabulary does not match checkpoint");
    if (last.model.config.n_classes != schema.num_classes())
        throw ValidationError("resume: checkpoint n_classes does not match schema");

    // max_epochs may grow on resume (extending a run); everything that
    // affects the per-step arithmetic must match exactly.
    const auto& ts = last.meta.extra.at("train_state");
    nlohmann::json stored = TrainConfig::from_json(ts.at("train_config")).to_json();
    nlohmann::json current = config.to_json();
    stored.erase("max_epochs");
    current.erase("max_epochs");
    if (stored != current)
        throw ValidationError("resume: train config does not match checkpoint");

    LoopInput st;
    st.model = std::move(last.model);
    st.start_epoch = last.meta.epoch;
    st.best_f1 = ts.at("best_f1").get<double>();
    st.since = ts.at("since").get<int>();
    st.opt_step = ts.at("opt_step").get<long>();
    st.report.best_epoch = ts.at("best_epoch").get<int>();
    st.stop_reason = stop_reason_parse(ts.at("stop_reason").get<std::string>());
    // A run that hit max_epochs can be extended; an early stop is final.
    st.already_stopped =
        ts.at("stopped").get<bool>() && st.stop_reason == StopReason::early_stop;
    for (const auto& e : ts.at("epochs")) {
        EpochRecord rec;
        rec.epoch = e.at(0).get<int>();
        rec.train_loss = e.at(1).get<double>();
        rec.val_f1_macro = e.at(2).get<double>();
        rec.val_accuracy = e.at(3).get<double>();
        st.report.epochs.push_back(rec);
    }

    auto params = st.model.parameters();
    for (Parameter* p : params) {
        auto mi = last.extra_tensors.find("opt/m/" + p->name);
        auto vi = last.extra_tensors.find("opt/v/" + p->name);
        if (mi == last.extra_tensors.end() || vi == last.extra_tensors.end())
            throw ValidationError("resume: checkpoint is missing optimizer state for '" + p->name + "'");
        nn::AdamState s(p->value);
        s.m = mi->second;
        s.v = vi->second;
        st.opt.push_back(std::move(s));
    }

    if (fs::exists(run_dir + "/best.ckpt"))
        st.best_model = load_checkpoint(run_dir + "/best.ckpt").model;
    else
        st.best_model = st.model;

    return run_loop(std::move(st), vocab, dataset, schema, config, run_dir);
}

} // namespace ctxsent
