// Command-line surface for the token watermarking toolkit.
//
// Verbs: make-corpus, train-tokenizer, fit-generator, finetune, generate,
// attack, detect, eval, fpr-check, joint. Exit codes: 0 success, 2 config or
// input validation error, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tokmark/harness.hpp"

using namespace tokmark;
namespace fs = std::filesystem;

namespace {

struct GlobalArgs {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

ExperimentConfig load_experiment(const GlobalArgs& args) {
    Config cfg = args.config_path.empty() ? Config::parse_string("", "<defaults>")
                                          : Config::parse_file(args.config_path);
    ExperimentConfig e = ExperimentConfig::from_config(cfg);
    if (args.seed_set) e.seed = args.seed;
    if (!args.out_dir.empty()) e.out_dir = args.out_dir;
    return e;
}

void write_file(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? "."
                               : fs::path(path).parent_path().string());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

void write_manifest(const std::string& artifact_path, const ExperimentConfig& cfg,
                    const std::string& kind) {
    nlohmann::json j;
    j["artifact"] = fs::path(artifact_path).filename().string();
    j["kind"] = kind;
    j["seed"] = cfg.seed;
    j["config_hash"] = cfg.config_hash();
    write_file(artifact_path + ".manifest.json", j.dump(2) + "\n");
}

fs::path out_path(const ExperimentConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.out_dir);
    return fs::path(cfg.out_dir) / name;
}

std::vector<ImageBuffer> corpus_for(const ExperimentConfig& cfg,
                                    const std::string& corpus_dir) {
    if (!corpus_dir.empty()) return load_corpus(corpus_dir);
    CorpusOptions opts;
    opts.count = cfg.corpus_count;
    opts.size = cfg.image_size;
    return make_corpus(opts, cfg.seed);
}

int run(int argc, char** argv) {
    CLI::App app{"token-level watermarking for vector-quantized image generation"};
    app.require_subcommand(1);

    GlobalArgs global;
    app.add_option("--config", global.config_path, "key=value config file");
    app.add_option("--seed", global.seed, "override the config seed")
        ->each([&](const std::string&) { global.seed_set = true; });
    app.add_option("--out", global.out_dir, "output directory");

    std::string corpus_dir, codebook_path, coder_path, model_path, input_path,
        transform_text, streams_path;
    int count = 0;
    bool with_augs = false, with_sync = false, use_gamma_prime = false;

    auto* mk = app.add_subcommand("make-corpus", "write the synthetic image corpus");
    mk->add_option("--count", count, "number of images");

    auto* tt = app.add_subcommand("train-tokenizer", "train the VQ codebook");
    tt->add_option("--corpus", corpus_dir, "directory of .ppm training images");

    auto* fg = app.add_subcommand("fit-generator", "fit the bigram token model");
    fg->add_option("--corpus", corpus_dir, "directory of .ppm training images");
    fg->add_option("--codebook", codebook_path, "codebook file");

    auto* ftc = app.add_subcommand("finetune", "finetune the linear coder");
    ftc->add_option("--corpus", corpus_dir, "directory of .ppm training images");
    ftc->add_option("--codebook", codebook_path, "codebook file");
    ftc->add_flag("--augs", with_augs, "use the augmentation ramp");

    auto* gen = app.add_subcommand("generate", "sample watermarked token streams");
    gen->add_option("--codebook", codebook_path, "codebook file");
    gen->add_option("--model", model_path, "bigram model file");
    gen->add_option("--count", count, "streams to generate");
    gen->add_flag("--decode", with_augs, "also write decoded .ppm images");

    auto* atk = app.add_subcommand("attack", "apply a transform to an image");
    atk->add_option("--input", input_path, "input .ppm")->required();
    atk->add_option("--transform", transform_text, "kind:parameter[:seed]")->required();

    auto* det = app.add_subcommand("detect", "score an image or token streams");
    det->add_option("--codebook", codebook_path, "codebook file");
    det->add_option("--coder", coder_path, "finetuned coder checkpoint");
    det->add_option("--input", input_path, "image (.ppm) to score");
    det->add_option("--streams", streams_path, "JSON-lines token streams to score");
    det->add_flag("--sync", with_sync, "estimate and revert geometry first");
    det->add_flag("--gamma-prime", use_gamma_prime, "score against gamma'");

    auto* ev = app.add_subcommand("eval", "variant x transform evaluation grid");
    auto* fpr = app.add_subcommand("fpr-check", "H0 soundness and drift suites");
    auto* joint = app.add_subcommand("joint", "joint text+image detection sweep");

    CLI11_PARSE(app, argc, argv);
    ExperimentConfig cfg = load_experiment(global);

    if (mk->parsed()) {
        CorpusOptions opts;
        opts.count = count > 0 ? count : cfg.corpus_count;
        opts.size = cfg.image_size;
        const auto dir = out_path(cfg, "corpus");
        write_corpus(make_corpus(opts, cfg.seed), dir.string());
        write_manifest(dir.string(), cfg, "corpus");
        std::cout << "wrote " << opts.count << " images under " << dir << "\n";
        return 0;
    }

    if (tt->parsed()) {
        const auto corpus = corpus_for(cfg, corpus_dir);
        std::vector<double> sse;
        const auto cb = train_codebook(corpus, cfg.codebook_k, cfg.patch_size,
                                       cfg.kmeans_iters,
                                       mix64(cfg.seed, 0x747261696eULL), &sse);
        const auto path = out_path(cfg, "codebook.bin").string();
        save_codebook(cb, path);
        write_manifest(path, cfg, "codebook");
        const auto alive = alive_mask(cb);
        std::cout << "codebook k=" << cb.k << " f=" << cb.patch_size << " alive="
                  << std::count(alive.begin(), alive.end(), uint8_t(1)) << " sse="
                  << (sse.empty() ? 0.0 : sse.back()) << " -> " << path << "\n";
        return 0;
    }

    if (fg->parsed()) {
        const auto corpus = corpus_for(cfg, corpus_dir);
        const auto cb = codebook_path.empty()
                            ? train_codebook(corpus, cfg.codebook_k, cfg.patch_size,
                                             cfg.kmeans_iters,
                                             mix64(cfg.seed, 0x747261696eULL))
                            : load_codebook(codebook_path);
        std::vector<TokenStream> dataset;
        for (const auto& img : corpus) dataset.push_back(encode(img, cb));
        auto model = fit_bigram(dataset, cfg.smoothing);
        model.temperature = cfg.temperature;
        const auto path = out_path(cfg, "bigram.bin").string();
        save_bigram(model, path);
        write_manifest(path, cfg, "bigram");
        std::cout << "bigram vocab=" << model.vocab_size << " -> " << path << "\n";
        return 0;
    }

    if (ftc->parsed()) {
        const auto corpus = corpus_for(cfg, corpus_dir);
        const auto cb = codebook_path.empty()
                            ? train_codebook(corpus, cfg.codebook_k, cfg.patch_size,
                                             cfg.kmeans_iters,
                                             mix64(cfg.seed, 0x747261696eULL))
                            : load_codebook(codebook_path);
        std::vector<TokenStream> dataset;
        for (const auto& img : corpus) dataset.push_back(encode(img, cb));
        LinearCoder coder = LinearCoder::identity(cb.dim());
        FinetuneConfig ft = cfg.ft;
        if (!with_augs) {
            ft.p_aug = 0.0;
            ft.stages = {{ft.epochs, {}}};
        }
        const auto trace = finetune(dataset, coder, cb, ft,
                                    mix64(cfg.seed, with_augs ? 0x667432ULL : 0x667431ULL));
        const std::string name = with_augs ? "coder_ft_augs.bin" : "coder_ft.bin";
        const auto path = out_path(cfg, name).string();
        save_coder(coder, path);
        write_manifest(path, cfg, "coder");
        write_trace_csv(trace, out_path(cfg, name + ".trace.csv").string());
        std::cout << "finetuned coder (" << (with_augs ? "with" : "no") << " augs), "
                  << trace.size() << " epochs -> " << path << "\n";
        return 0;
    }

    if (gen->parsed()) {
        const auto corpus = corpus_for(cfg, corpus_dir);
        const auto cb = codebook_path.empty()
                            ? train_codebook(corpus, cfg.codebook_k, cfg.patch_size,
                                             cfg.kmeans_iters,
                                             mix64(cfg.seed, 0x747261696eULL))
                            : load_codebook(codebook_path);
        BigramModel model;
        if (model_path.empty()) {
            std::vector<TokenStream> dataset;
            for (const auto& img : corpus) dataset.push_back(encode(img, cb));
            model = fit_bigram(dataset, cfg.smoothing);
            model.temperature = cfg.temperature;
        } else {
            model = load_bigram(model_path);
        }
        const auto alive = alive_mask(cb);
        const int n = count > 0 ? count : 16;
        std::string jsonl;
        for (int i = 0; i < n; ++i) {
            Rng rng(mix64(mix64(cfg.seed, 0x67656eULL), uint64_t(i)));
            GenerateOptions opts;
            opts.watermark = &cfg.wm;
            opts.alive = &alive;
            const auto stream = generate_stream(model, cfg.stream_length, opts, rng);
            jsonl += token_stream_to_jsonl(stream) + "\n";
            if (with_augs) {
                char name[40];
                std::snprintf(name, sizeof(name), "gen_%04d.ppm", i);
                save_ppm(decode(stream, cb), out_path(cfg, name).string());
            }
        }
        const auto path = out_path(cfg, "streams.jsonl").string();
        write_file(path, jsonl);
        write_manifest(path, cfg, "streams");
        std::cout << "generated " << n << " streams -> " << path << "\n";
        return 0;
    }

    if (atk->parsed()) {
        const auto spec = TransformSpec::parse(transform_text);
        const auto img = load_ppm(input_path);
        const auto path = out_path(cfg, "attacked.ppm").string();
        save_ppm(apply_transform(img, spec), path);
        std::cout << "applied " << spec.to_string() << " -> " << path << "\n";
        return 0;
    }

    if (det->parsed()) {
        if (codebook_path.empty() && streams_path.empty())
            throw ConfigError("detect: need --codebook (for images) or --streams");
        nlohmann::json out;
        DedupSet seen;
        ScoreOptions opts;
        opts.use_gamma_prime = use_gamma_prime;
        if (!input_path.empty()) {
            const auto cb = load_codebook(codebook_path);
            const auto alive = alive_mask(cb);
            LinearCoder coder = LinearCoder::identity(cb.dim());
            if (!coder_path.empty()) coder = load_coder(coder_path);
            ImageBuffer img = load_ppm(input_path);
            if (with_sync) {
                const auto est = estimate_transform(img, cfg.sync);
                out["sync_estimate"] = nlohmann::json::parse(est.to_json());
                if (est.decision == SyncDecision::revert)
                    img = invert_transform(img, est, img.height, img.width);
            }
            TokenStream s = encode(img, cb, coder_path.empty() ? nullptr : &coder);
            s.context_size = cfg.wm.context_size;
            const auto r = score_stream(s, cfg.wm, &alive, seen, opts);
            out["score"] = nlohmann::json::parse(r.to_json());
        } else {
            std::ifstream in(streams_path);
            if (!in) throw ConfigError("cannot open " + streams_path);
            std::vector<TokenStream> streams;
            std::string line;
            while (std::getline(in, line))
                if (!line.empty()) streams.push_back(token_stream_from_jsonl(line));
            std::vector<WatermarkConfig> cfgs(streams.size(), cfg.wm);
            for (size_t i = 0; i < streams.size(); ++i) {
                cfgs[i].context_size = streams[i].context_size;
                cfgs[i].split_mode = SplitMode::uniform;
            }
            std::vector<const std::vector<uint8_t>*> alive(streams.size(), nullptr);
            const auto r = joint_detect(streams, cfgs, alive, opts);
            out["score"] = nlohmann::json::parse(r.to_json());
        }
        std::cout << out.dump(2) << "\n";
        return 0;
    }

    if (ev->parsed() || fpr->parsed() || joint->parsed()) {
        const Artifacts art = build_artifacts(cfg);
        if (ev->parsed()) {
            const auto report = run_eval(art, cfg);
            write_file(out_path(cfg, "eval.csv").string(), report.to_csv());
            write_file(out_path(cfg, "eval.json").string(), report.to_json() + "\n");
            std::cout << report.to_csv();
        } else if (fpr->parsed()) {
            const auto report = run_fpr_check(art, cfg);
            write_file(out_path(cfg, "fpr.csv").string(), report.to_csv());
            write_file(out_path(cfg, "fpr.json").string(), report.to_json() + "\n");
            std::cout << report.to_csv();
        } else {
            const auto report = run_joint(art, cfg);
            write_file(out_path(cfg, "joint.csv").string(), report.to_csv());
            write_file(out_path(cfg, "joint.json").string(), report.to_json() + "\n");
            std::cout << report.to_csv();
        }
        return 0;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
