#include "ctxsent/model.hpp"

#include <cstring>
#include <fstream>

#include "ctxsent/error.hpp"

namespace ctxsent {

void ModelConfig::validate() const {
    if (vocab_size < 5) throw ValidationError("config: vocab_size too small");
    if (max_len < 8) throw ValidationError("config: max_len must be >= 8");
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
        throw ValidationError("config: n_heads must divide d_model");
    if (n_layers <= 0 || d_ff <= 0) throw ValidationError("config: n_layers and d_ff must be positive");
    if (n_classes != 2 && n_classes != 3) throw ValidationError("config: n_classes must be 2 or 3");
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("config: dropout must be in [0,1)");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"vocab_size", vocab_size}, {"max_len", max_len},   {"d_model", d_model},
            {"n_heads", n_heads},       {"n_layers", n_layers}, {"d_ff", d_ff},
            {"n_classes", n_classes},   {"dropout", dropout},   {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.init_seed = j.at("init_seed").get<uint64_t>();
    return c;
}

nn::AttentionParams Model::Layer::attn() const {
    nn::AttentionParams p;
    p.wq = wq.value; p.bq = bq.value;
    p.wk = wk.value; p.bk = bk.value;
    p.wv = wv.value; p.bv = bv.value;
    p.wo = wo.value; p.bo = bo.value;
    return p;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> ps = {&tok_emb, &pos_emb, &seg_emb, &emb_ln_g, &emb_ln_b};
    for (auto& l : layers)
        for (Parameter* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                             &l.ln1_g, &l.ln1_b, &l.ff_w1, &l.ff_b1, &l.ff_w2, &l.ff_b2,
                             &l.ln2_g, &l.ln2_b})
            ps.push_back(p);
    ps.push_back(&head_w);
    ps.push_back(&head_b);
    return ps;
}

std::vector<const Parameter*> Model::parameters() const {
    auto ps = const_cast<Model*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

void Model::zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
}

namespace {

bool is_gain(const std::string& name) {
    return name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
}

bool is_bias_like(const std::string& name) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) return true;
    auto pos = name.rfind('.');
    std::string leaf = pos == std::string::npos ? name : name.substr(pos + 1);
    return !leaf.empty() && leaf[0] == 'b';
}

} // namespace

Model init_model(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config = config;
    int d = config.d_model;

    m.tok_emb = Parameter("tok_emb", Tensor(config.vocab_size, d));
    m.pos_emb = Parameter("pos_emb", Tensor(config.max_len, d));
    m.seg_emb = Parameter("seg_emb", Tensor(2, d));
    m.emb_ln_g = Parameter("emb_ln.g", Tensor(d));
    m.emb_ln_b = Parameter("emb_ln.b", Tensor(d));
    m.layers.resize(static_cast<size_t>(config.n_layers));
    for (int i = 0; i < config.n_layers; ++i) {
        auto& l = m.layers[static_cast<size_t>(i)];
        std::string pre = "layer" + std::to_string(i) + ".";
        l.wq = Parameter(pre + "attn.wq", Tensor(d, d));
        l.bq = Parameter(pre + "attn.bq", Tensor(d));
        l.wk = Parameter(pre + "attn.wk", Tensor(d, d));
        l.bk = Parameter(pre + "attn.bk", Tensor(d));
        l.wv = Parameter(pre + "attn.wv", Tensor(d, d));
        l.bv = Parameter(pre + "attn.bv", Tensor(d));
        l.wo = Parameter(pre + "attn.wo", Tensor(d, d));
        l.bo = Parameter(pre + "attn.bo", Tensor(d));
        l.ln1_g = Parameter(pre + "ln1.g", Tensor(d));
        l.ln1_b = Parameter(pre + "ln1.b", Tensor(d));
        l.ff_w1 = Parameter(pre + "ff.w1", Tensor(d, config.d_ff));
        l.ff_b1 = Parameter(pre + "ff.b1", Tensor(config.d_ff));
        l.ff_w2 = Parameter(pre + "ff.w2", Tensor(config.d_ff, d));
        l.ff_b2 = Parameter(pre + "ff.b2", Tensor(d));
        l.ln2_g = Parameter(pre + "ln2.g", Tensor(d));
        l.ln2_b = Parameter(pre + "ln2.b", Tensor(d));
    }
    m.head_w = Parameter("head.w", Tensor(d, config.n_classes));
    m.head_b = Parameter("head.b", Tensor(config.n_classes));

    Rng rng(derive_seed(config.init_seed, 0));
    for (Parameter* p : m.parameters()) {
        if (is_gain(p->name)) {
            p->value.fill(1.0);
        } else if (is_bias_like(p->name)) {
            p->value.zero();
        } else {
            for (int64_t i = 0; i < p->value.size(); ++i)
                p->value[i] = rng.truncated_normal(0.02);
        }
    }
    return m;
}

namespace {

constexpr double kLnEps = 1e-5;

// Inverted dropout: mask entries are 0 or 1/(1-p).
Tensor make_dropout_mask(int rows, int cols, double p, Rng& rng) {
    Tensor mask(rows, cols);
    double keep = 1.0 / (1.0 - p);
    for (int64_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() < p ? 0.0 : keep;
    return mask;
}

void apply_mask(Tensor& x, const Tensor& mask) {
    for (int64_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

Tensor linear_fwd(const Tensor& x, const Parameter& w, const Parameter& b) {
    Tensor y = nn::matmul(x, w.value);
    for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < y.cols(); ++j) y(i, j) += b.value[j];
    return y;
}

void linear_bwd(const Tensor& x, Parameter& w, Parameter& b, const Tensor& dy, Tensor& dx) {
    nn::matmul_backward(x, w.value, dy, dx, w.grad);
    for (int i = 0; i < dy.rows(); ++i)
        for (int j = 0; j < dy.cols(); ++j) b.grad[j] += dy(i, j);
}

} // namespace

Tensor forward(Model& model, const std::vector<Encoding>& batch, bool training,
               Rng* dropout_rng, ForwardCache* cache) {
    const auto& cfg = model.config;
    if (batch.empty()) throw ValidationError("forward: empty batch");
    bool use_dropout = training && cfg.dropout > 0.0;
    if (use_dropout && !dropout_rng)
        throw ValidationError("forward: dropout requires an RNG in training mode");

    int b = static_cast<int>(batch.size());
    Tensor logits(b, cfg.n_classes);
    ForwardCache local;
    ForwardCache& fc = cache ? *cache : local;
    fc.seqs.assign(static_cast<size_t>(b), {});
    fc.batch = batch;
    fc.training = use_dropout;

    for (int s = 0; s < b; ++s) {
        const Encoding& enc = batch[static_cast<size_t>(s)];
        int enc_len = static_cast<int>(enc.token_ids.size());
        if (enc_len < 1 || enc_len > cfg.max_len)
            throw ValidationError("forward: encoding length exceeds model max_len");
        auto& sc = fc.seqs[static_cast<size_t>(s)];

        // Unmasked positions form a prefix; computation is trimmed to it, so
        // PAD content can never leak into any representation. Encodings may
        // be padded to any length up to max_len.
        int t = 0;
        while (t < enc_len && enc.attention_mask[static_cast<size_t>(t)] == 1) ++t;
        if (t == 0) throw ValidationError("forward: encoding with empty attention mask");
        sc.eff_len = t;
        sc.key_mask.assign(static_cast<size_t>(t), 1);

        Tensor x(t, cfg.d_model);
        for (int i = 0; i < t; ++i) {
            int tok = enc.token_ids[static_cast<size_t>(i)];
            int seg = enc.segment_ids[static_cast<size_t>(i)];
            if (tok < 0 || tok >= cfg.vocab_size)
                throw ValidationError("forward: token id out of vocab range");
            for (int j = 0; j < cfg.d_model; ++j)
                x(i, j) = model.tok_emb.value(tok, j) + model.pos_emb.value(i, j) +
                          model.seg_emb.value(seg, j);
        }
        sc.emb_sum = x;
        x = nn::layer_norm(x, model.emb_ln_g.value, model.emb_ln_b.value, kLnEps, &sc.emb_ln);
        if (use_dropout) {
            sc.emb_drop_mask = make_dropout_mask(t, cfg.d_model, cfg.dropout, *dropout_rng);
            apply_mask(x, sc.emb_drop_mask);
        }
        sc.x_in = x;

        sc.layers.resize(static_cast<size_t>(cfg.n_layers));
        for (int li = 0; li < cfg.n_layers; ++li) {
            auto& layer = model.layers[static_cast<size_t>(li)];
            auto& lc = sc.layers[static_cast<size_t>(li)];

            Tensor a = nn::multi_head_attention(x, x, sc.key_mask,
                                                [&] {
                                                    auto p = layer.attn();
                                                    p.n_heads = cfg.n_heads;
                                                    return p;
                                                }(),
                                                &lc.attn);
            if (use_dropout) {
                lc.attn_drop_mask = make_dropout_mask(t, cfg.d_model, cfg.dropout, *dropout_rng);
                apply_mask(a, lc.attn_drop_mask);
            }
            a.add_(x);
            lc.resid1 = a;
            Tensor x1 = nn::layer_norm(a, layer.ln1_g.value, layer.ln1_b.value, kLnEps, &lc.ln1);
            lc.x1 = x1;

            lc.ff_h = linear_fwd(x1, layer.ff_w1, layer.ff_b1);
            lc.ff_g = nn::gelu(lc.ff_h);
            Tensor f = linear_fwd(lc.ff_g, layer.ff_w2, layer.ff_b2);
            if (use_dropout) {
                lc.ff_drop_mask = make_dropout_mask(t, cfg.d_model, cfg.dropout, *dropout_rng);
                apply_mask(f, lc.ff_drop_mask);
            }
            f.add_(x1);
            lc.resid2 = f;
            x = nn::layer_norm(f, layer.ln2_g.value, layer.ln2_b.value, kLnEps, &lc.ln2);
            lc.x2 = x;
        }

        // CLS pooling: position 0 only.
        for (int j = 0; j < cfg.n_classes; ++j) {
            double v = model.head_b.value[j];
            for (int dI = 0; dI < cfg.d_model; ++dI)
                v += x(0, dI) * model.head_w.value(dI, j);
            logits(s, j) = v;
        }
    }

    if (!logits.all_finite()) throw RuntimeFailure("forward: non-finite logits");
    return logits;
}

void backward(Model& model, const ForwardCache& cache, const Tensor& dlogits) {
    const auto& cfg = model.config;
    int b = static_cast<int>(cache.seqs.size());
    if (dlogits.rows() != b || dlogits.cols() != cfg.n_classes)
        throw ValidationError("backward: dlogits shape mismatch");

    for (int s = 0; s < b; ++s) {
        const auto& sc = cache.seqs[static_cast<size_t>(s)];
        const Encoding& enc = cache.batch[static_cast<size_t>(s)];
        int t = sc.eff_len;

        // Head: logits = x2[0] * W + b
        const Tensor& x_final = sc.layers.back().x2;
        Tensor dx(t, cfg.d_model);
        for (int j = 0; j < cfg.n_classes; ++j) {
            double dl = dlogits(s, j);
            model.head_b.grad[j] += dl;
            for (int dI = 0; dI < cfg.d_model; ++dI) {
                model.head_w.grad(dI, j) += x_final(0, dI) * dl;
                dx(0, dI) += model.head_w.value(dI, j) * dl;
            }
        }

        for (int li = cfg.n_layers - 1; li >= 0; --li) {
            auto& layer = model.layers[static_cast<size_t>(li)];
            const auto& lc = sc.layers[static_cast<size_t>(li)];

            Tensor d_resid2(t, cfg.d_model);
            nn::layer_norm_backward(lc.ln2, layer.ln2_g.value, dx, d_resid2,
                                    layer.ln2_g.grad, layer.ln2_b.grad);
            // resid2 = x1 + dropout(ff_out)
            Tensor d_f = d_resid2;
            if (cache.training) apply_mask(d_f, lc.ff_drop_mask);
            Tensor d_g(t, cfg.d_ff);
            linear_bwd(lc.ff_g, layer.ff_w2, layer.ff_b2, d_f, d_g);
            Tensor d_h(t, cfg.d_ff);
            nn::gelu_backward(lc.ff_h, d_g, d_h);
            Tensor d_x1 = d_resid2; // residual branch
            linear_bwd(lc.x1, layer.ff_w1, layer.ff_b1, d_h, d_x1);

            Tensor d_resid1(t, cfg.d_model);
            nn::layer_norm_backward(lc.ln1, layer.ln1_g.value, d_x1, d_resid1,
                                    layer.ln1_g.grad, layer.ln1_b.grad);
            // resid1 = x + dropout(attn_out)
            Tensor d_a = d_resid1;
            if (cache.training) apply_mask(d_a, lc.attn_drop_mask);

            auto params = layer.attn();
            params.n_heads = cfg.n_heads;
            nn::AttentionGrads agrads(params);
            Tensor d_q_in(t, cfg.d_model), d_kv_in(t, cfg.d_model);
            nn::multi_head_attention_backward(lc.attn, sc.key_mask, params, d_a,
                                              d_q_in, d_kv_in, agrads);
            layer.wq.grad.add_(agrads.wq); layer.bq.grad.add_(agrads.bq);
            layer.wk.grad.add_(agrads.wk); layer.bk.grad.add_(agrads.bk);
            layer.wv.grad.add_(agrads.wv); layer.bv.grad.add_(agrads.bv);
            layer.wo.grad.add_(agrads.wo); layer.bo.grad.add_(agrads.bo);

            dx = d_resid1; // residual branch
            dx.add_(d_q_in);
            dx.add_(d_kv_in);
        }

        // Embedding LN and dropout.
        if (cache.training) apply_mask(dx, sc.emb_drop_mask);
        Tensor d_emb(t, cfg.d_model);
        nn::layer_norm_backward(sc.emb_ln, model.emb_ln_g.value, dx, d_emb,
                                model.emb_ln_g.grad, model.emb_ln_b.grad);
        for (int i = 0; i < t; ++i) {
            int tok = enc.token_ids[static_cast<size_t>(i)];
            int seg = enc.segment_ids[static_cast<size_t>(i)];
            for (int j = 0; j < cfg.d_model; ++j) {
                double g = d_emb(i, j);
                model.tok_emb.grad(tok, j) += g;
                model.pos_emb.grad(i, j) += g;
                model.seg_emb.grad(seg, j) += g;
            }
        }
    }
}

Prediction predict(Model& model, const Vocab& vocab, const std::string& context,
                   const std::string& text) {
    Encoding enc = encode_pair(vocab, context, text, model.config.max_len);
    Tensor logits = forward(model, {enc});
    Tensor probs = nn::softmax_rows(logits);
    Prediction p;
    p.probs.resize(static_cast<size_t>(model.config.n_classes));
    double best = -1.0;
    for (int j = 0; j < model.config.n_classes; ++j) {
        p.probs[static_cast<size_t>(j)] = probs(0, j);
        if (probs(0, j) > best) {
            best = probs(0, j);
            p.label = j;
        }
    }
    return p;
}

// ---- checkpoint serialization -------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'S', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

void write_tensor_record(std::ostream& out, const std::string& name, const Tensor& t) {
    write_string(out, name);
    out.put(0); // dtype tag: f64
    write_u32(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) write_u64(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * 8));
}

std::pair<std::string, Tensor> read_tensor_record(std::istream& in) {
    std::string name = read_string(in);
    int dtype = in.get();
    if (dtype != 0) throw ValidationError("checkpoint: unknown dtype tag for '" + name + "'");
    uint32_t rank = read_u32(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u64(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    if (!in) throw ValidationError("checkpoint: truncated tensor record '" + name + "'");
    return {std::move(name), std::move(t)};
}

} // namespace

nlohmann::json CheckpointMeta::to_json() const {
    return {{"vocab_hash", vocab_hash}, {"epoch", epoch}, {"best_val_f1", best_val_f1}, {"extra", extra}};
}

CheckpointMeta CheckpointMeta::from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.vocab_hash = j.at("vocab_hash").get<uint64_t>();
    m.epoch = j.at("epoch").get<int>();
    m.best_val_f1 = j.at("best_val_f1").get<double>();
    m.extra = j.at("extra");
    return m;
}

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path,
                     const std::map<std::string, Tensor>& extra_tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    write_u32(out, kCheckpointVersion);
    write_string(out, model.config.to_json().dump());
    write_string(out, meta.to_json().dump());

    auto params = model.parameters();
    write_u32(out, static_cast<uint32_t>(params.size() + extra_tensors.size()));
    for (const Parameter* p : params) write_tensor_record(out, p->name, p->value);
    for (const auto& [name, t] : extra_tensors) write_tensor_record(out, name, t);
    if (!out) throw RuntimeFailure("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw ValidationError("not a checkpoint file: " + path);
    uint32_t version = read_u32(in);
    if (version != kCheckpointVersion)
        throw ValidationError("checkpoint format version " + std::to_string(version) +
                              " not supported (expected " + std::to_string(kCheckpointVersion) + ")");

    LoadedCheckpoint lc;
    ModelConfig cfg = ModelConfig::from_json(nlohmann::json::parse(read_string(in)));
    lc.meta = CheckpointMeta::from_json(nlohmann::json::parse(read_string(in)));
    lc.model = init_model(cfg);

    std::map<std::string, Tensor> tensors;
    uint32_t n = read_u32(in);
    for (uint32_t i = 0; i < n; ++i) {
        auto [name, t] = read_tensor_record(in);
        tensors.emplace(std::move(name), std::move(t));
    }
    for (Parameter* p : lc.model.parameters()) {
        auto it = tensors.find(p->name);
        if (it == tensors.end())
            throw ValidationError("checkpoint is missing parameter '" + p->name + "'");
        if (!it->second.same_shape(p->value))
            throw ValidationError("checkpoint parameter '" + p->name + "' has shape " +
                                  it->second.shape_str() + ", config expects " + p->value.shape_str());
        p->value = std::move(it->second);
        tensors.erase(it);
    }
    lc.extra_tensors = std::move(tensors);
    return lc;
}

} // namespace ctxsent
