#include "ctxsent/benchmark.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "ctxsent/error.hpp"
#include "ctxsent/nn.hpp"
#include "ctxsent/rng.hpp"

namespace ctxsent {

namespace fs = std::filesystem;

LocalModelAdapter::LocalModelAdapter(std::string name, Model model, const Vocab& vocab)
    : name_(std::move(name)), model_(std::move(model)), vocab_(vocab) {}

int LocalModelAdapter::predict_label(const std::string& context, const std::string& text) {
    return predict(model_, vocab_, context, text).label;
}

ContextBlindAdapter::ContextBlindAdapter(std::string name, Model model, const Vocab& vocab)
    : name_(std::move(name)), model_(std::move(model)), vocab_(vocab) {}

int ContextBlindAdapter::predict_label(const std::string& context, const std::string& text) {
    (void)context; // the ablation never looks at it
    int max_len = model_.config.max_len;
    auto words = Vocab::word_split(text);
    if (words.empty()) throw ValidationError("context-blind adapter: empty text");
    int n_txt = std::min<int>(static_cast<int>(words.size()), max_len - 4);

    Encoding e;
    e.token_ids.assign(static_cast<size_t>(max_len), Vocab::kPad);
    e.segment_ids.assign(static_cast<size_t>(max_len), 0);
    e.attention_mask.assign(static_cast<size_t>(max_len), 0);
    int pos = 0;
    auto put = [&](int id, int seg) {
        e.token_ids[static_cast<size_t>(pos)] = id;
        e.segment_ids[static_cast<size_t>(pos)] = seg;
        e.attention_mask[static_cast<size_t>(pos)] = 1;
        ++pos;
    };
    put(Vocab::kCls, 0);
    put(Vocab::kUnk, 0); // context span collapsed to one UNK
    put(Vocab::kSep, 0);
    for (int i = 0; i < n_txt; ++i) put(vocab_.id_of(words[static_cast<size_t>(i)]), 1);
    put(Vocab::kSep, 1);

    Tensor logits = forward(model_, {e});
    int arg = 0;
    for (int j = 1; j < logits.cols(); ++j)
        if (logits(0, j) > logits(0, arg)) arg = j;
    return arg;
}

namespace {
// Placeholders are replaced by JSON-encoded strings (quotes included), so
// templates look like: {"text": {text}, "context": {context}}.
std::string fill_template(const std::string& tpl, const std::string& key, const std::string& value) {
    std::string out = tpl;
    std::string ph = "{" + key + "}";
    std::string encoded = nlohmann::json(value).dump();
    size_t pos;
    while ((pos = out.find(ph)) != std::string::npos) out.replace(pos, ph.size(), encoded);
    return out;
}
} // namespace

HttpAdapter::HttpAdapter(HttpAdapterConfig config, const LabelSchema& schema)
    : config_(std::move(config)), schema_(schema) {
    if (config_.request_template.empty()) {
        config_.request_template = config_.mode == AdapterMode::context_conditioned
                                       ? R"({"context": {context}, "text": {text}})"
                                       : R"({"text": {text}})";
    }
    if (config_.mode == AdapterMode::context_free &&
        config_.request_template.find("{context}") != std::string::npos)
        throw ValidationError("adapter '" + config_.name +
                              "': context_free request template must not mention {context}");

    httplib::Client cli(config_.host);
    cli.set_connection_timeout(config_.timeout_seconds);
    auto res = cli.Get(config_.health_path);
    if (!res)
        throw RuntimeFailure("adapter '" + config_.name + "': health probe failed for " +
                             config_.host + config_.health_path);
}

int HttpAdapter::predict_label(const std::string& context, const std::string& text) {
    std::string body = fill_template(config_.request_template, "text", text);
    if (config_.mode == AdapterMode::context_conditioned)
        body = fill_template(body, "context", context);

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        httplib::Client cli(config_.host);
        cli.set_connection_timeout(config_.timeout_seconds);
        cli.set_read_timeout(config_.timeout_seconds);
        auto res = cli.Post(config_.path, body, "application/json");
        if (!res) {
            last_error = "timeout or connection failure";
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        try {
            auto j = nlohmann::json::parse(res->body);
            return schema_.index_of(j.at("label").get<std::string>());
        } catch (const std::exception& e) {
            throw RuntimeFailure("adapter '" + config_.name + "': non-parsable response: " + e.what());
        }
    }
    throw RuntimeFailure("adapter '" + config_.name + "': " + last_error);
}

// ---- synthetic corpus ---------------------------------------------------

SyntheticSpec default_synthetic_spec() {
    constexpr int kNeg = 0, kNet = 1, kPos = 2;
    SyntheticSpec spec;
    spec.topics = {
        {"ekonomi-tumbuh", "Pertumbuhan ekonomi Indonesia",
         {{"naik", kPos}, {"tumbuh", kPos}, {"melonjak", kPos}, {"menguat", kPos},
          {"turun", kNeg}, {"melambat", kNeg}, {"merosot", kNeg}, {"anjlok", kNeg},
          {"stabil", kNet}, {"stagnan", kNeg}}},
        {"inflasi", "Inflasi dan daya beli masyarakat",
         {{"naik", kNeg}, {"tumbuh", kNeg}, {"melonjak", kNeg}, {"menguat", kNeg},
          {"turun", kPos}, {"melambat", kPos}, {"merosot", kPos}, {"anjlok", kPos},
          {"stabil", kPos}, {"stagnan", kNet}}},
        {"antikorupsi", "Pemberantasan korupsi dan penegakan hukum",
         {{"tangkap", kPos}, {"terungkap", kPos}, {"ditindak", kPos}, {"divonis", kPos},
          {"bebas", kNeg}, {"lolos", kNeg}, {"mangkrak", kNeg}, {"disuap", kNeg},
          {"diperiksa", kNet}, {"disidang", kPos}}},
        {"citra-pejabat", "Citra pejabat dan lembaga pemerintah",
         {{"tangkap", kNeg}, {"terungkap", kNeg}, {"ditindak", kNeg}, {"divonis", kNeg},
          {"bebas", kPos}, {"lolos", kPos}, {"mangkrak", kNet}, {"disuap", kNet},
          {"diperiksa", kNeg}, {"disidang", kNeg}}},
        {"ekspor", "Kinerja ekspor nasional",
         {{"meningkat", kPos}, {"melesat", kPos}, {"berkembang", kPos}, {"bertambah", kPos},
          {"menyusut", kNeg}, {"terhambat", kNeg}, {"tertekan", kNeg}, {"berkurang", kNeg},
          {"terkendali", kNet}, {"fluktuatif", kNeg}}},
        {"impor", "Ketergantungan pada impor",
         {{"meningkat", kNeg}, {"melesat", kNeg}, {"berkembang", kNeg}, {"bertambah", kNeg},
          {"menyusut", kPos}, {"terhambat", kPos}, {"tertekan", kPos}, {"berkurang", kPos},
          {"terkendali", kPos}, {"fluktuatif", kNet}}}};
    return spec;
}

namespace {

const std::vector<std::string>& text_prefixes() {
    static const std::vector<std::string> v = {
        "kabar terbaru",      "laporan resmi menyebut", "data pekan ini",
        "warga menilai",      "media melaporkan",       "pengamat mencatat",
        "hasil survei menunjukkan", "angka resmi memperlihatkan"};
    return v;
}

const std::vector<std::string>& text_subjects() {
    static const std::vector<std::string> v = {"angkanya", "jumlahnya",  "tingkatnya",
                                               "capaiannya", "kondisinya", "situasinya"};
    return v;
}

const std::vector<std::string>& text_suffixes() {
    static const std::vector<std::string> v = {
        "bulan ini",       "tahun ini",      "di berbagai daerah", "dibanding periode lalu",
        "secara signifikan", "menurut laporan", "setiap bulan",     "dalam beberapa pekan"};
    return v;
}

const std::vector<std::string>& filler_bodies() {
    static const std::vector<std::string> v = {
        "jadwal rapat koordinasi diumumkan", "daftar peserta telah dirilis",
        "dokumen laporan tersedia daring",   "acara berlangsung sesuai agenda",
        "petugas hadir di lokasi",           "data lengkap dapat diunduh"};
    return v;
}

std::string make_cue_text(Rng& rng, const std::string& cue) {
    const auto& pre = text_prefixes();
    const auto& sub = text_subjects();
    const auto& suf = text_suffixes();
    return pre[rng.uniform_index(pre.size())] + ", " + sub[rng.uniform_index(sub.size())] + " " +
           cue + " " + suf[rng.uniform_index(suf.size())];
}

void validate_spec(const SyntheticSpec& spec) {
    if (spec.topics.size() < 2 || spec.topics.size() % 2 != 0)
        throw ValidationError("synthetic spec: needs an even number (>= 2) of topics");
    if (spec.total_examples < static_cast<int>(spec.topics.size()))
        throw ValidationError("synthetic spec: too few examples for the topic count");
    if (spec.neutral_filler_rate < 0.0 || spec.neutral_filler_rate >= 1.0 ||
        spec.flip_fraction < 0.0 || spec.flip_fraction > 1.0 ||
        spec.neutral_filler_rate + spec.flip_fraction > 1.0)
        throw ValidationError("synthetic spec: invalid filler/flip fractions");
    for (const auto& t : spec.topics) {
        std::set<std::string> seen;
        for (const auto& [cue, label] : t.cues) {
            if (label < 0 || label > 2)
                throw ValidationError("synthetic spec: cue label out of range in topic " + t.topic_id);
            if (!seen.insert(cue).second)
                throw ValidationError("synthetic spec: cue '" + cue + "' has two polarities in topic " +
                                      t.topic_id);
        }
        if (t.cues.empty())
            throw ValidationError("synthetic spec: topic " + t.topic_id + " has no cues");
    }
}

} // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    validate_spec(spec);
    Rng rng(derive_seed(spec.seed, 0xC0));
    Dataset ds;
    int n_pairs = static_cast<int>(spec.topics.size()) / 2;
    int counter = 0;

    for (int p = 0; p < n_pairs; ++p) {
        const TopicSpec& a = spec.topics[static_cast<size_t>(2 * p)];
        const TopicSpec& b = spec.topics[static_cast<size_t>(2 * p + 1)];

        // Cues shared by both topics with differing labels are flip-capable.
        std::vector<std::tuple<std::string, int, int>> shared; // cue, label_a, label_b
        for (const auto& [cue, la] : a.cues)
            for (const auto& [cue_b, lb] : b.cues)
                if (cue == cue_b && la != lb) shared.emplace_back(cue, la, lb);
        if (shared.empty() && spec.flip_fraction > 0.0)
            throw ValidationError("synthetic spec: topics " + a.topic_id + "/" + b.topic_id +
                                  " share no flip-capable cue");

        int per_pair = spec.total_examples / n_pairs +
                       (p < spec.total_examples % n_pairs ? 1 : 0);
        int n_filler = static_cast<int>(spec.neutral_filler_rate * per_pair + 0.5);
        int n_flip = static_cast<int>(spec.flip_fraction * per_pair + 0.5);
        n_flip -= n_flip % 2;
        int n_solo = per_pair - n_filler - n_flip;

        auto emit = [&](const TopicSpec& topic, const std::string& text, int label,
                        const std::string& flip_group) {
            PairExample ex;
            ex.id = "syn-" + std::to_string(p) + "-" + std::to_string(counter++);
            ex.context = topic.context;
            ex.text = text;
            ex.label = label;
            ex.topic_id = topic.topic_id;
            ex.source_kind = SourceKind::synthetic;
            if (!flip_group.empty()) ex.extra["flip_group"] = flip_group;
            ds.push_back(std::move(ex));
        };

        for (int f = 0; f < n_flip / 2; ++f) {
            const auto& [cue, la, lb] = shared[rng.uniform_index(shared.size())];
            std::string text = make_cue_text(rng, cue);
            std::string group = "p" + std::to_string(p) + "-f" + std::to_string(f);
            emit(a, text, la, group);
            emit(b, text, lb, group);
        }
        for (int s = 0; s < n_solo; ++s) {
            const TopicSpec& topic = (s % 2 == 0) ? a : b;
            const auto& [cue, label] = topic.cues[rng.uniform_index(topic.cues.size())];
            emit(topic, make_cue_text(rng, cue), label, "");
        }
        for (int f = 0; f < n_filler; ++f) {
            const TopicSpec& topic = (f % 2 == 0) ? a : b;
            const auto& bodies = filler_bodies();
            const auto& suf = text_suffixes();
            std::string text = bodies[rng.uniform_index(bodies.size())] + " " +
                               suf[rng.uniform_index(suf.size())];
            emit(topic, text, 1, ""); // Netral
        }
    }

    rng.shuffle(ds);
    return ds;
}

double flip_subset_ceiling(const Dataset& ds) {
    std::map<std::string, std::map<int, long long>> by_text;
    long long total = 0;
    for (const auto& ex : ds) {
        if (!ex.extra.contains("flip_group")) continue;
        by_text[ex.text][ex.label] += 1;
        total += 1;
    }
    if (total == 0) return 0.0;
    long long best = 0;
    for (const auto& [text, labels] : by_text) {
        long long mx = 0;
        for (const auto& [label, n] : labels) mx = std::max(mx, n);
        best += mx;
    }
    return static_cast<double>(best) / static_cast<double>(total);
}

// ---- evaluation ---------------------------------------------------------

namespace {

std::string sanitize_name(const std::string& name) {
    std::string out;
    for (char c : name)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out;
}

// Predictions per pair in dataset order; nullopt marks a failed pair.
std::vector<std::optional<int>> gather_predictions(ClassifierAdapter& adapter,
                                                   const Dataset& dataset,
                                                   const std::string& cache_dir) {
    std::map<std::string, int> cache;
    std::string cache_path;
    if (!cache_dir.empty()) {
        fs::create_directories(cache_dir);
        cache_path = cache_dir + "/" + sanitize_name(adapter.name()) + ".jsonl";
        std::ifstream in(cache_path, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            cache[j.at("id").get<std::string>()] = j.at("label").get<int>();
        }
    }

    std::ofstream append;
    if (!cache_path.empty()) append.open(cache_path, std::ios::binary | std::ios::app);

    std::vector<std::optional<int>> preds;
    preds.reserve(dataset.size());
    for (const auto& ex : dataset) {
        auto it = cache.find(ex.id);
        if (it != cache.end()) {
            preds.push_back(it->second);
            continue;
        }
        try {
            int label = adapter.predict_label(ex.context, ex.text);
            preds.push_back(label);
            if (append.is_open()) {
                append << nlohmann::json{{"id", ex.id}, {"label", label}}.dump() << "\n";
                append.flush();
            }
        } catch (const std::exception&) {
            preds.push_back(std::nullopt);
        }
    }
    return preds;
}

EvalReport report_from_predictions(const std::string& adapter_name, const Dataset& dataset,
                                   const std::vector<std::optional<int>>& preds,
                                   const LabelSchema& schema) {
    std::vector<int> golds, predicted;
    long long failed = 0;
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (!preds[i]) {
            failed += 1;
            continue;
        }
        golds.push_back(dataset[i].label);
        predicted.push_back(*preds[i]);
    }
    if (golds.empty()) throw RuntimeFailure("adapter '" + adapter_name + "' failed on every pair");
    EvalReport rep = evaluate(confusion(golds, predicted, schema.classes()));
    rep.classifier_name = adapter_name;
    rep.failed = failed;
    return rep;
}

} // namespace

EvalReport evaluate_adapter(ClassifierAdapter& adapter, const Dataset& dataset,
                            const LabelSchema& schema, const std::string& cache_dir) {
    if (dataset.empty()) throw ValidationError("evaluate_adapter: empty dataset");
    auto preds = gather_predictions(adapter, dataset, cache_dir);
    return report_from_predictions(adapter.name(), dataset, preds, schema);
}

std::optional<std::string> probe_context_free(ClassifierAdapter& adapter, const Dataset& dataset,
                                              size_t max_probes) {
    const std::string alt_context = "konteks pembanding untuk uji invariansi";
    size_t n = std::min(max_probes, dataset.size());
    for (size_t i = 0; i < n; ++i) {
        const auto& ex = dataset[i];
        int p1 = adapter.predict_label(ex.context, ex.text);
        int p2 = adapter.predict_label(alt_context, ex.text);
        if (p1 != p2)
            return "adapter '" + adapter.name() + "' declared context_free but changed its answer " +
                   "for pair '" + ex.id + "' when the context changed (" + std::to_string(p1) +
                   " vs " + std::to_string(p2) + ")";
    }
    return std::nullopt;
}

ComparisonResult compare(const std::vector<ClassifierAdapter*>& adapters,
                         const std::vector<const Dataset*>& datasets, const LabelSchema& schema,
                         const std::string& cache_dir) {
    if (adapters.size() < 2) throw ValidationError("compare: need at least 2 adapters");
    if (datasets.size() != adapters.size())
        throw ValidationError("compare: one dataset per adapter required");

    // Same-test-set discipline: every adapter must be evaluated on the
    // identical pair-id set.
    std::set<std::string> ref_ids;
    for (const auto& ex : *datasets[0]) ref_ids.insert(ex.id);
    for (size_t i = 1; i < datasets.size(); ++i) {
        std::set<std::string> ids;
        for (const auto& ex : *datasets[i]) ids.insert(ex.id);
        if (ids != ref_ids)
            throw ValidationError("compare: adapter '" + adapters[i]->name() +
                                  "' is evaluated on a different pair-id set; refusing the comparison");
    }

    ComparisonResult result;
    for (size_t i = 0; i < adapters.size(); ++i) {
        ClassifierAdapter& adapter = *adapters[i];
        const Dataset& ds = *datasets[i];

        if (adapter.mode() == AdapterMode::context_free) {
            if (auto violation = probe_context_free(adapter, ds))
                result.notes.push_back(*violation);
        }

        auto preds = gather_predictions(adapter, ds, cache_dir);
        EvalReport rep = report_from_predictions(adapter.name(), ds, preds, schema);
        if (!rep.full_coverage())
            result.notes.push_back("adapter '" + adapter.name() + "': coverage below 100% (" +
                                   std::to_string(rep.failed) + " failed pairs)");
        result.reports.push_back(std::move(rep));

        FlipRow row;
        row.adapter = adapter.name();
        long long correct = 0;
        for (size_t k = 0; k < ds.size(); ++k) {
            if (!ds[k].extra.contains("flip_group") || !preds[k]) continue;
            row.flip_n += 1;
            if (*preds[k] == ds[k].label) correct += 1;
        }
        if (row.flip_n > 0)
            row.flip_accuracy = static_cast<double>(correct) / static_cast<double>(row.flip_n);
        result.flip_rows.push_back(std::move(row));
    }

    result.markdown = render_report(result.reports, ReportFormat::markdown);
    result.overall_csv = render_overall_csv(result.reports);
    result.per_class_csv = render_per_class_csv(result.reports);
    std::ostringstream flip;
    flip << "adapter,flip_accuracy,flip_n\n";
    char buf[64];
    for (const auto& row : result.flip_rows) {
        std::snprintf(buf, sizeof(buf), "%.3f", row.flip_accuracy);
        flip << row.adapter << "," << buf << "," << row.flip_n << "\n";
    }
    result.flip_csv = flip.str();

    if (!result.notes.empty()) {
        result.markdown += "\nNotes:\n";
        for (const auto& n : result.notes) result.markdown += "- " + n + "\n";
    }
    return result;
}

ComparisonResult compare(const std::vector<ClassifierAdapter*>& adapters, const Dataset& dataset,
                         const LabelSchema& schema, const std::string& cache_dir) {
    std::vector<const Dataset*> datasets(adapters.size(), &dataset);
    return compare(adapters, datasets, schema, cache_dir);
}

} // namespace ctxsent
