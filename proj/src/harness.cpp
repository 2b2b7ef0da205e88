#include "tokmark/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "tokmark/numstats.hpp"

namespace tokmark {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::base: return "base";
        case Variant::ft: return "ft";
        case Variant::ft_augs: return "ft_augs";
        case Variant::ft_augs_sync: return "ft_augs_sync";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    for (auto v : {Variant::base, Variant::ft, Variant::ft_augs, Variant::ft_augs_sync})
        if (s == to_string(v)) return v;
    throw std::invalid_argument("unknown variant: " + s);
}

const LinearCoder* Artifacts::coder_for(Variant v) const {
    switch (v) {
        case Variant::base: return nullptr;
        case Variant::ft: return &coder_ft;
        case Variant::ft_augs:
        case Variant::ft_augs_sync: return &coder_ft_augs;
    }
    return nullptr;
}

namespace {

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ','))
        if (!part.empty()) out.push_back(std::stod(part));
    return out;
}

} // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& cfg) {
    ExperimentConfig e;
    e.seed = cfg.get_u64("seed", 1);
    e.workers = int(cfg.get_int("workers", 1));
    e.out_dir = cfg.get_string("out", "out");

    e.wm.key = cfg.get_u64("watermark.key", 0x746f6b6d61726bULL);
    e.wm.gamma = cfg.get_double("watermark.gamma", 0.25);
    e.wm.delta = cfg.get_double("watermark.delta", 2.0);
    e.wm.context_size = int(cfg.get_int("watermark.h", 1));
    const std::string split = cfg.get_string("watermark.split", "stratified");
    if (split == "uniform") e.wm.split_mode = SplitMode::uniform;
    else if (split == "stratified") e.wm.split_mode = SplitMode::stratified;
    else throw ConfigError("watermark.split must be uniform or stratified (" +
                           cfg.location("watermark.split") + ")");
    e.wm.validate();

    e.corpus_count = int(cfg.get_int("tokenizer.corpus_count", 200));
    e.image_size = int(cfg.get_int("tokenizer.image_size", 64));
    e.codebook_k = int(cfg.get_int("tokenizer.k", 256));
    e.patch_size = int(cfg.get_int("tokenizer.patch", 8));
    e.kmeans_iters = int(cfg.get_int("tokenizer.iters", 25));
    e.stream_length = (e.image_size / e.patch_size) * (e.image_size / e.patch_size);

    e.smoothing = cfg.get_double("generator.smoothing", 0.05);
    e.temperature = cfg.get_double("generator.temperature", 1.0);

    e.ft = FinetuneConfig::defaults(int(cfg.get_int("finetune.epochs", 10)));
    e.ft.lambda = cfg.get_double("finetune.lambda", 1.0);
    e.ft.p_aug = cfg.get_double("finetune.p_aug", 0.5);
    e.ft.batch_size = int(cfg.get_int("finetune.batch", 16));
    e.ft.learning_rate = cfg.get_double("finetune.lr", 5e-3);
    e.ft.lr_decay = cfg.get_double("finetune.decay", 0.9);
    e.ft.validate();

    e.sync.alpha = cfg.get_double("sync.alpha", 0.008);
    e.sync.block_size = int(cfg.get_int("sync.block", 8));
    e.sync.strip_width = int(cfg.get_int("sync.strip", 0));
    e.sync.sync_key = cfg.get_u64("sync.key", 0x73796e636b6579ULL);
    e.sync.validate();

    if (cfg.has("eval.variants")) {
        e.variants.clear();
        std::istringstream in(cfg.get_string("eval.variants"));
        std::string part;
        while (std::getline(in, part, ','))
            if (!part.empty()) e.variants.push_back(variant_from_string(part));
        if (e.variants.empty())
            throw ConfigError("eval.variants is empty (" + cfg.location("eval.variants") + ")");
    }
    e.samples = int(cfg.get_int("eval.samples", 200));
    if (cfg.has("eval.fprs")) e.fprs = parse_double_list(cfg.get_string("eval.fprs"));
    e.summary_only = cfg.get_bool("eval.summary_only", false);

    e.joint_trials = int(cfg.get_int("joint.trials", 200));
    e.text_length = int(cfg.get_int("joint.text_length", 32));
    e.text_vocab = int(cfg.get_int("joint.text_vocab", 512));
    e.zipf_exponent = cfg.get_double("joint.zipf_exponent", 1.05);
    if (cfg.has("joint.corruptions"))
        e.corruption_grid = parse_double_list(cfg.get_string("joint.corruptions"));
    e.weak_noise = cfg.get_double("joint.weak_noise", 0.1);
    e.strong_noise = cfg.get_double("joint.strong_noise", 0.4);

    e.h0_samples = int(cfg.get_int("fpr.samples", 5000));
    e.h0_stream_length = int(cfg.get_int("fpr.stream_length", 256));
    e.drift_samples = int(cfg.get_int("fpr.drift_samples", 201));
    e.drift_stream_length = int(cfg.get_int("fpr.drift_length", 100000));
    e.n_alive_override = int(cfg.get_int("fpr.n_alive", 0));
    return e;
}

uint64_t ExperimentConfig::config_hash() const {
    char buf[1024];
    std::snprintf(
        buf, sizeof(buf),
        "seed=%llu wm=%llu/%.17g/%.17g/%d/%d len=%d corpus=%d/%d cb=%d/%d/%d "
        "gen=%.17g/%.17g ft=%.17g/%.17g/%d/%d/%.17g/%.17g sync=%.17g/%d/%d/%llu "
        "eval=%d/%d joint=%d/%d/%d/%.17g/%.17g/%.17g fpr=%d/%d/%d/%d/%d",
        (unsigned long long)seed, (unsigned long long)wm.key, wm.gamma, wm.delta,
        wm.context_size, int(wm.split_mode), stream_length, corpus_count, image_size,
        codebook_k, patch_size, kmeans_iters, smoothing, temperature, ft.lambda,
        ft.p_aug, ft.epochs, ft.batch_size, ft.learning_rate, ft.lr_decay, sync.alpha,
        sync.block_size, sync.strip_width, (unsigned long long)sync.sync_key, samples,
        int(summary_only), joint_trials, text_length, text_vocab, zipf_exponent,
        weak_noise, strong_noise, h0_samples, h0_stream_length, drift_samples,
        drift_stream_length, n_alive_override);
    uint64_t h = 0x636f6e666967ULL;
    for (const char* p = buf; *p; ++p) h = mix64(h, uint64_t(uint8_t(*p)));
    for (auto v : variants) h = mix64(h, uint64_t(v));
    for (double f : fprs) h = mix64(h, uint64_t(f * 1e9));
    return h;
}

Artifacts build_artifacts(const ExperimentConfig& cfg) {
    Artifacts art;
    CorpusOptions copts;
    copts.count = cfg.corpus_count;
    copts.size = cfg.image_size;
    const auto corpus = make_corpus(copts, cfg.seed);

    art.codebook = train_codebook(corpus, cfg.codebook_k, cfg.patch_size,
                                  cfg.kmeans_iters, mix64(cfg.seed, 0x747261696eULL));
    art.alive = alive_mask(art.codebook);

    std::vector<TokenStream> dataset;
    dataset.reserve(corpus.size());
    for (const auto& img : corpus) dataset.push_back(encode(img, art.codebook));

    art.model = fit_bigram(dataset, cfg.smoothing);
    art.model.temperature = cfg.temperature;

    const int d = art.codebook.dim();
    art.coder_ft = LinearCoder::identity(d);
    FinetuneConfig plain = cfg.ft;
    plain.p_aug = 0.0;
    plain.stages = {{plain.epochs, {}}};
    finetune(dataset, art.coder_ft, art.codebook, plain, mix64(cfg.seed, 0x667431ULL));

    art.coder_ft_augs = LinearCoder::identity(d);
    finetune(dataset, art.coder_ft_augs, art.codebook, cfg.ft,
             mix64(cfg.seed, 0x667432ULL));
    return art;
}

DetectionOutcome run_sample(const Artifacts& art, const ExperimentConfig& cfg,
                            Variant variant, const TransformSpec& attack,
                            uint64_t sample_seed) {
    Rng rng(mix64(sample_seed, 0x73616d706c65ULL));

    GenerateOptions gopts;
    gopts.watermark = &cfg.wm;
    gopts.alive = &art.alive;
    const TokenStream stream = generate_stream(art.model, cfg.stream_length, gopts, rng);

    const LinearCoder* coder = art.coder_for(variant);
    ImageBuffer img = decode(stream, art.codebook, coder);

    const bool with_sync = variant == Variant::ft_augs_sync;
    if (with_sync) img = embed_sync(img, cfg.sync);

    TransformSpec t = attack;
    if (t.kind == TransformKind::noise) t.seed = mix64(sample_seed, 0x6e6fULL);
    ImageBuffer attacked = apply_transform(img, t);

    DetectionOutcome out;
    if (with_sync) {
        const auto est = estimate_transform(attacked, cfg.sync);
        if (est.decision == SyncDecision::revert) {
            attacked = invert_transform(attacked, est, img.height, img.width);
            out.sync_reverted = true;
        }
    }

    TokenStream retok = encode(attacked, art.codebook, coder);
    retok.context_size = cfg.wm.context_size;

    DedupSet seen;
    const auto score = score_stream(retok, cfg.wm, &art.alive, seen);
    out.p_value = score.p_value;
    out.token_match = token_match(stream, retok);
    return out;
}

void parallel_for(int64_t count, int workers, const std::function<void(int64_t)>& fn) {
    if (workers <= 1 || count <= 1) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::vector<std::thread> pool;
    const int n_threads = int(std::min<int64_t>(workers, count));
    pool.reserve(size_t(n_threads));
    for (int t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (int64_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    for (auto& th : pool) th.join();
}

EvalReport run_eval(const Artifacts& art, const ExperimentConfig& cfg) {
    EvalReport report;
    report.fprs = cfg.fprs;
    report.seed = cfg.seed;
    report.config_hash = cfg.config_hash();

    std::vector<GridEntry> grid;
    if (cfg.summary_only) {
        grid.push_back({TransformSpec{}, "identity", true});
        for (auto cat : {TransformCategory::valuemetric, TransformCategory::geometric})
            for (const auto& e : summary_set(cat)) grid.push_back(e);
    } else {
        grid.push_back({TransformSpec{}, "identity", false});
        for (const auto& e : transform_grid()) grid.push_back(e);
    }

    for (Variant variant : cfg.variants) {
        for (const auto& entry : grid) {
            std::vector<DetectionOutcome> outcomes(size_t(cfg.samples));
            parallel_for(cfg.samples, cfg.workers, [&](int64_t i) {
                const uint64_t sample_seed =
                    mix64(mix64(cfg.seed, uint64_t(variant) * 1000 +
                                              uint64_t(&entry - grid.data())),
                          uint64_t(i));
                outcomes[size_t(i)] = run_sample(art, cfg, variant, entry.spec,
                                                 sample_seed);
            });
            report.detections += cfg.samples;

            EvalRow row;
            row.variant = to_string(variant);
            row.family = entry.family;
            row.parameter = entry.spec.parameter;
            row.is_summary = entry.is_summary;
            row.samples = cfg.samples;
            std::vector<double> pvals;
            pvals.reserve(outcomes.size());
            double tm = 0.0, p = 0.0;
            for (const auto& o : outcomes) {
                pvals.push_back(o.p_value);
                tm += o.token_match;
                p += o.p_value;
            }
            row.mean_tm = tm / double(cfg.samples);
            row.mean_p = p / double(cfg.samples);
            for (double fpr : cfg.fprs)
                row.tpr.push_back(numstats::tpr_at_fpr(pvals, {}, fpr));
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<int> alive_indices(const std::vector<uint8_t>& alive) {
    std::vector<int> idx;
    for (size_t i = 0; i < alive.size(); ++i)
        if (alive[i]) idx.push_back(int(i));
    return idx;
}

} // namespace

FprReport run_fpr_check(const Artifacts& art, const ExperimentConfig& cfg) {
    FprReport report;
    report.seed = cfg.seed;
    report.config_hash = cfg.config_hash();

    std::vector<uint8_t> alive = art.alive;
    if (cfg.n_alive_override > 0) {
        if (cfg.n_alive_override > int(alive.size()))
            throw std::invalid_argument("fpr.n_alive exceeds the vocabulary");
        std::fill(alive.begin(), alive.end(), uint8_t(0));
        std::fill(alive.begin(), alive.begin() + cfg.n_alive_override, uint8_t(1));
    }
    const auto alive_idx = alive_indices(alive);
    const int vocab = int(alive.size());

    auto h0_pvalues = [&](SplitMode split, bool gamma_prime_mode, int samples,
                          int length) {
        std::vector<double> pvals((size_t(samples)));
        parallel_for(samples, cfg.workers, [&](int64_t i) {
            Rng rng(mix64(mix64(cfg.seed, 0x683073ULL + uint64_t(split) * 2 +
                                              uint64_t(gamma_prime_mode)),
                          uint64_t(i)));
            WatermarkConfig wm = cfg.wm;
            wm.split_mode = split;
            wm.key = rng.next_u64();
            TokenStream s;
            s.modality = Modality::image;
            s.vocab_size = vocab;
            s.context_size = wm.context_size;
            s.tokens.resize(size_t(length));
            for (auto& tok : s.tokens)
                tok = alive_idx[size_t(rng.below(alive_idx.size()))];
            DedupSet seen;
            ScoreOptions opts;
            opts.use_gamma_prime = gamma_prime_mode;
            pvals[size_t(i)] = score_stream(s, wm, &alive, seen, opts).p_value;
        });
        return pvals;
    };

    // Short-stream uniformity suite.
    for (SplitMode split : {SplitMode::stratified, SplitMode::uniform}) {
        if (cfg.h0_samples <= 0) break;
        auto pvals = h0_pvalues(split, false, cfg.h0_samples, cfg.h0_stream_length);
        FprRow row;
        row.split = split == SplitMode::stratified ? "stratified" : "uniform";
        row.gamma_mode = "gamma";
        row.stream_length = cfg.h0_stream_length;
        row.samples = cfg.h0_samples;
        row.ks = numstats::ks_uniform(pvals);
        row.ks_plus = numstats::ks_uniform_plus(pvals);
        row.median_p = median(pvals);
        if (split == SplitMode::stratified) {
            report.histogram.assign(20, 0.0);
            for (double p : pvals)
                ++report.histogram[size_t(std::min(19, int(p * 20.0)))];
            for (auto& b : report.histogram) b /= double(pvals.size());
        }
        report.rows.push_back(row);
    }

    // Long-stream drift suite (concatenated-sample analog).
    for (SplitMode split : {SplitMode::uniform, SplitMode::stratified}) {
        if (cfg.drift_samples <= 0) break;
        for (bool gp : {false, true}) {
            auto pvals = h0_pvalues(split, gp, cfg.drift_samples,
                                    cfg.drift_stream_length);
            FprRow row;
            row.split = split == SplitMode::stratified ? "stratified" : "uniform";
            row.gamma_mode = gp ? "gamma_prime" : "gamma";
            row.stream_length = cfg.drift_stream_length;
            row.samples = cfg.drift_samples;
            row.ks = numstats::ks_uniform(pvals);
            row.ks_plus = numstats::ks_uniform_plus(pvals);
            row.median_p = median(pvals);
            report.rows.push_back(row);
        }
    }
    return report;
}

JointReport run_joint(const Artifacts& art, const ExperimentConfig& cfg) {
    JointReport report;
    report.seed = cfg.seed;
    report.config_hash = cfg.config_hash();

    ZipfTextModel text_model;
    text_model.vocab_size = cfg.text_vocab;
    text_model.exponent = cfg.zipf_exponent;
    text_model.temperature = cfg.temperature;

    WatermarkConfig wm_text = cfg.wm;
    wm_text.split_mode = SplitMode::uniform; // text has no dead codes

    const double fpr = cfg.fprs.empty() ? 0.01 : cfg.fprs.front();
    for (double noise : {0.0, cfg.weak_noise, cfg.strong_noise}) {
        for (double corruption : cfg.corruption_grid) {
            std::vector<uint8_t> text_hit(size_t(cfg.joint_trials), 0);
            std::vector<uint8_t> joint_hit(size_t(cfg.joint_trials), 0);
            parallel_for(cfg.joint_trials, cfg.workers, [&](int64_t i) {
                Rng rng(mix64(mix64(cfg.seed, 0x6a6f696e74ULL +
                                                  uint64_t(noise * 1000) * 64 +
                                                  uint64_t(corruption * 100)),
                              uint64_t(i)));
                GenerateOptions topts;
                topts.watermark = &wm_text;
                TokenStream text =
                    generate_stream(text_model, cfg.text_length, topts, rng);
                if (corruption > 0.0) text = corrupt_text(text, corruption, rng);

                GenerateOptions iopts;
                iopts.watermark = &cfg.wm;
                iopts.alive = &art.alive;
                const TokenStream image_stream =
                    generate_stream(art.model, cfg.stream_length, iopts, rng);
                ImageBuffer img = decode(image_stream, art.codebook);
                if (noise > 0.0) {
                    TransformSpec spec;
                    spec.kind = TransformKind::noise;
                    spec.parameter = noise;
                    spec.seed = rng.next_u64();
                    img = apply_transform(img, spec);
                }
                TokenStream retok = encode(img, art.codebook);
                retok.context_size = cfg.wm.context_size;

                DedupSet text_seen;
                const double text_p =
                    score_stream(text, wm_text, nullptr, text_seen).p_value;
                const double joint_p =
                    joint_detect({text, retok}, {wm_text, cfg.wm},
                                 {nullptr, &art.alive})
                        .p_value;
                text_hit[size_t(i)] = text_p < fpr ? 1 : 0;
                joint_hit[size_t(i)] = joint_p < fpr ? 1 : 0;
            });
            JointRow row;
            row.corruption = corruption;
            row.image_noise = noise;
            row.trials = cfg.joint_trials;
            int th = 0, jh = 0;
            for (size_t i = 0; i < text_hit.size(); ++i) {
                th += text_hit[i];
                jh += joint_hit[i];
            }
            row.text_tpr = double(th) / double(cfg.joint_trials);
            row.joint_tpr = double(jh) / double(cfg.joint_trials);
            report.rows.push_back(row);
        }
    }
    return report;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

} // namespace

std::string EvalReport::to_csv() const {
    std::string out = "variant,family,parameter,summary,samples,mean_tm,mean_p";
    for (double f : fprs) out += ",tpr@" + format_double(f);
    out += "\n";
    for (const auto& r : rows) {
        out += r.variant + "," + r.family + "," + format_double(r.parameter) + "," +
               (r.is_summary ? "1" : "0") + "," + std::to_string(r.samples) + "," +
               format_double(r.mean_tm) + "," + format_double(r.mean_p);
        for (double t : r.tpr) out += "," + format_double(t);
        out += "\n";
    }
    out += "# seed=" + std::to_string(seed) + " config_hash=" + std::to_string(config_hash) +
           " detections=" + std::to_string(detections) + "\n";
    return out;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["detections"] = detections;
    j["fprs"] = fprs;
    auto rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row;
        row["variant"] = r.variant;
        row["family"] = r.family;
        row["parameter"] = r.parameter;
        row["summary"] = r.is_summary;
        row["samples"] = r.samples;
        row["mean_tm"] = r.mean_tm;
        row["mean_p"] = r.mean_p;
        row["tpr"] = r.tpr;
        rows_json.push_back(std::move(row));
    }
    j["rows"] = std::move(rows_json);
    return j.dump(2);
}

std::string FprReport::to_csv() const {
    std::string out = "split,gamma_mode,stream_length,samples,ks,ks_plus,median_p\n";
    for (const auto& r : rows)
        out += r.split + "," + r.gamma_mode + "," + std::to_string(r.stream_length) +
               "," + std::to_string(r.samples) + "," + format_double(r.ks) + "," +
               format_double(r.ks_plus) + "," + format_double(r.median_p) + "\n";
    out += "# seed=" + std::to_string(seed) + " config_hash=" + std::to_string(config_hash) + "\n";
    return out;
}

std::string FprReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["histogram"] = histogram;
    auto rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row;
        row["split"] = r.split;
        row["gamma_mode"] = r.gamma_mode;
        row["stream_length"] = r.stream_length;
        row["samples"] = r.samples;
        row["ks"] = r.ks;
        row["ks_plus"] = r.ks_plus;
        row["median_p"] = r.median_p;
        rows_json.push_back(std::move(row));
    }
    j["rows"] = std::move(rows_json);
    return j.dump(2);
}

std::string JointReport::to_csv() const {
    std::string out = "image_noise,corruption,trials,text_tpr,joint_tpr\n";
    for (const auto& r : rows)
        out += format_double(r.image_noise) + "," + format_double(r.corruption) + "," +
               std::to_string(r.trials) + "," + format_double(r.text_tpr) + "," +
               format_double(r.joint_tpr) + "\n";
    out += "# seed=" + std::to_string(seed) + " config_hash=" + std::to_string(config_hash) + "\n";
    return out;
}

std::string JointReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    auto rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row;
        row["image_noise"] = r.image_noise;
        row["corruption"] = r.corruption;
        row["trials"] = r.trials;
        row["text_tpr"] = r.text_tpr;
        row["joint_tpr"] = r.joint_tpr;
        rows_json.push_back(std::move(row));
    }
    j["rows"] = std::move(rows_json);
    return j.dump(2);
}

} // namespace tokmark
