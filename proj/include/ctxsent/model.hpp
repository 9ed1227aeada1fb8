#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxsent/nn.hpp"
#include "ctxsent/rng.hpp"
#include "ctxsent/tensor.hpp"
#include "ctxsent/tokenizer.hpp"

namespace ctxsent {

struct ModelConfig {
    int vocab_size = 8000;
    int max_len = 256;
    int d_model = 128;
    int n_heads = 4;
    int n_layers = 2;
    int d_ff = 512;
    int n_classes = 3;
    double dropout = 0.1;
    uint64_t init_seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

// Token + position + segment embeddings, N post-norm encoder layers, and a
// linear head over the CLS hidden state.
struct Model {
    ModelConfig config;

    Parameter tok_emb, pos_emb, seg_emb;
    Parameter emb_ln_g, emb_ln_b;

    struct Layer {
        nn::AttentionParams attn() const;
        Parameter wq, bq, wk, bk, wv, bv, wo, bo;
        Parameter ln1_g, ln1_b;
        Parameter ff_w1, ff_b1, ff_w2, ff_b2;
        Parameter ln2_g, ln2_b;
    };
    std::vector<Layer> layers;
    Parameter head_w, head_b;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    void zero_grads();
};

// Weights from truncated normal (sigma 0.02), biases zero, layer-norm gains
// one; deterministic per init_seed.
Model init_model(const ModelConfig& config);

// Per-sequence activation caches kept for the backward pass.
struct ForwardCache;

// Returns logits [B, n_classes]. When `training` is true and
// config.dropout > 0, dropout_rng must be provided.
Tensor forward(Model& model, const std::vector<Encoding>& batch, bool training = false,
               Rng* dropout_rng = nullptr, ForwardCache* cache = nullptr);

// Accumulates parameter gradients for the batch that produced `cache`.
void backward(Model& model, const ForwardCache& cache, const Tensor& dlogits);

struct Prediction {
    int label = 0;
    std::vector<double> probs;
};

// Softmax over logits; argmax with ties broken toward the lowest index.
Prediction predict(Model& model, const Vocab& vocab, const std::string& context,
                   const std::string& text);

struct ForwardCache {
    struct SeqCache {
        int eff_len = 0;
        std::vector<int> key_mask;
        Tensor emb_sum;
        nn::LayerNormCache emb_ln;
        Tensor emb_drop_mask;
        Tensor x_in; // layer 0 input after embedding LN (+dropout)
        struct LayerCache {
            nn::AttentionCache attn;
            Tensor attn_drop_mask;
            Tensor resid1; // x + dropout(attn)
            nn::LayerNormCache ln1;
            Tensor x1; // after ln1
            Tensor ff_h; // pre-gelu
            Tensor ff_g; // post-gelu
            Tensor ff_drop_mask;
            Tensor resid2;
            nn::LayerNormCache ln2;
            Tensor x2;
        };
        std::vector<LayerCache> layers;
    };
    std::vector<SeqCache> seqs;
    std::vector<Encoding> batch;
    bool training = false;
};

// ---- checkpointing ------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    uint64_t vocab_hash = 0;
    int epoch = 0;
    double best_val_f1 = 0.0;
    // Free-form training metadata (patience counter, optimizer step, seeds).
    nlohmann::json extra = nlohmann::json::object();

    nlohmann::json to_json() const;
    static CheckpointMeta from_json(const nlohmann::json& j);
};

// Little-endian container: magic, format version, config JSON, metadata
// JSON, then per-tensor records (name, dtype tag, shape, raw doubles).
// `extra_tensors` carries optimizer state under "opt/" names.
void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path,
                     const std::map<std::string, Tensor>& extra_tensors = {});

struct LoadedCheckpoint {
    Model model;
    CheckpointMeta meta;
    std::map<std::string, Tensor> extra_tensors;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace ctxsent
