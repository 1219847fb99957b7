#include <chrono>
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "dctts/acceptance.hpp"
#include "dctts/bench.hpp"
#include "dctts/corpus.hpp"
#include "dctts/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dctts;

namespace {

Config load_config_file(const std::string& path) {
    Config cfg = Config::from_file(path);
    return cfg;
}

int do_corpus_gen(const std::string& spec_path, const std::string& out_dir,
                  const std::string& config_path) {
    Config cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    const AudioConfig acfg = AudioConfig::from(cfg);
    const ToyCorpusSpec spec = spec_path.empty() ? ToyCorpusSpec::builtin() : ToyCorpusSpec::load(spec_path);
    const ToyCorpus corpus = generate_toy_corpus(spec, acfg);
    save_corpus(corpus, out_dir);
    std::cout << "corpus: " << corpus.utterances.size() << " utterances ("
              << corpus.split(false).size() << " train / " << corpus.split(true).size() << " test) -> "
              << out_dir << "\n";
    return 0;
}

int do_train_vq(const std::string& config_path) {
    const Config cfg = load_config_file(config_path);
    const Stage1Result r = train_stage1_vq(cfg);
    std::cout << "stage 1: " << r.steps << " steps, loss " << r.initial_loss << " -> " << r.final_loss
              << ", checkpoint " << r.checkpoint_path << "\n";
    return 0;
}

int do_train_diffusion(const std::string& config_path) {
    const Config cfg = load_config_file(config_path);
    const Stage2Result r = train_stage2_diffusion(cfg);
    write_run_report(cfg.get_string("paths.run_dir"));
    std::cout << "stage 2: " << r.steps << " steps, mean loss " << r.mean_first_window << " -> "
              << r.mean_last_window << ", checkpoint " << r.checkpoint_path << "\n";
    return 0;
}

Config run_dir_config(const std::string& ckpt_dir) {
    const fs::path saved = fs::path(ckpt_dir) / "config.conf";
    if (!fs::exists(saved))
        throw ConfigError("no config.conf in checkpoint directory " + ckpt_dir +
                          " (run train-diffusion first)");
    Config cfg = Config::from_file(saved.string());
    cfg.set("paths.run_dir", ckpt_dir);
    return cfg;
}

int do_synthesize(const std::string& ckpt_dir, const std::string& text, int steps, uint64_t seed,
                  const std::string& out_wav) {
    Config cfg = run_dir_config(ckpt_dir);
    TrainedModels models = load_models(cfg);
    const SynthesisResult result = synthesize(models, text, steps, seed);
    write_synthesis_artifacts(result, models, out_wav);
    std::cout << "synthesized " << result.wave.seconds() << " s (" << result.mel.frames()
              << " mel frames, " << result.tokens.size() << " tokens) -> " << out_wav << "\n";
    return 0;
}

int do_bench(const std::string& ckpt_dir, int steps, int repeats, const std::string& csv,
             int threads) {
    Config cfg = run_dir_config(ckpt_dir);
    TrainedModels models = load_models(cfg);
    const std::vector<const Utterance*> test = models.corpus.split(true);
    std::vector<std::string> texts;
    for (const Utterance* u : test) texts.push_back(u->text);
    if (texts.empty()) throw ConfigError("bench: corpus has no test utterances");

    auto generator = make_mel_generator(models);
    BenchReport report = bench_mrtf(generator, texts, steps, repeats, models.audio, "", threads);
    report.parameter_count = models.text->parameter_count() + models.denoiser->parameter_count() +
                             models.vq->parameter_count();
    // flops estimate for one pass over the bench texts
    double flops = 0.0;
    for (const std::string& text : texts) {
        const std::vector<int> ids = g2p(text, models.corpus.lexicon, models.corpus.inventory);
        const TextEncoder::Encoded enc = models.text->encode_text(
            ids, models.denoiser->config().max_positions / models.vq_cfg.latent_f());
        const int n = enc.columns.dim(0) * models.vq_cfg.latent_f();
        flops += models.text->flops(static_cast<int>(ids.size()));
        flops += static_cast<double>(steps) * models.denoiser->flops(n);
        flops += models.vq->flops(enc.columns.dim(0) * models.vq_cfg.time_factor()) / 2.0;  // decoder half
    }
    report.gflops = flops / 1e9;

    // end-to-end factor including waveform inversion, reported alongside
    {
        const auto t0 = std::chrono::steady_clock::now();
        double audio = 0.0;
        for (size_t i = 0; i < texts.size(); ++i) {
            const SynthesisResult r = synthesize(models, texts[i], steps, 2000 + i);
            audio += r.wave.seconds();
        }
        const auto t1 = std::chrono::steady_clock::now();
        report.end_to_end_rtf = audio / std::chrono::duration<double>(t1 - t0).count();
    }

    if (!csv.empty()) write_bench_csv(report, csv);
    std::cout << "mRTF " << report.mrtf << " (median of " << repeats << " repeats, " << report.steps
              << " steps, " << report.audio_seconds << " s audio)\n"
              << "params " << report.parameter_count << ", est. " << report.gflops
              << " GFLOPs, end-to-end RTF " << report.end_to_end_rtf << "\n"
              << "hardware: " << report.hardware << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"discrete-diffusion text-to-speech workbench"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, ckpt_dir, text, out_wav, csv_path, work_dir, data_dir = "data";
    int steps = 100, repeats = 5, threads = 1;
    uint64_t seed = 1;

    CLI::App* corpus_gen = app.add_subcommand("corpus-gen", "generate the synthetic sine corpus");
    corpus_gen->add_option("--spec", spec_path, "corpus spec json (omit for the builtin corpus)");
    corpus_gen->add_option("--out", out_dir, "output corpus directory")->required();
    corpus_gen->add_option("--config", config_path, "audio config overrides");

    CLI::App* train_vq = app.add_subcommand("train-vq", "stage 1: train the spectrogram codec");
    train_vq->add_option("--config", config_path, "training config")->required();

    CLI::App* train_diff = app.add_subcommand("train-diffusion", "stage 2: train the diffusion model");
    train_diff->add_option("--config", config_path, "training config")->required();

    CLI::App* synth = app.add_subcommand("synthesize", "text to waveform");
    synth->add_option("--text", text, "input text")->required();
    synth->add_option("--ckpt", ckpt_dir, "run directory with checkpoints")->required();
    synth->add_option("--steps", steps, "diffusion steps");
    synth->add_option("--seed", seed, "sampling seed");
    synth->add_option("--out", out_wav, "output wav path")->required();

    CLI::App* bench = app.add_subcommand("bench", "measure mel-generation mRTF");
    bench->add_option("--ckpt", ckpt_dir, "run directory with checkpoints")->required();
    bench->add_option("--steps", steps, "diffusion steps");
    bench->add_option("--repeats", repeats, "timing repeats (median)");
    bench->add_option("--csv", csv_path, "write the report to this csv");
    bench->add_option("--threads", threads, "worker threads (timing only; outputs are unchanged)");

    CLI::App* accept = app.add_subcommand("accept", "run the acceptance suite");
    accept->add_option("--out", work_dir, "working directory for acceptance runs");
    accept->add_option("--data-dir", data_dir, "directory holding accept.conf and toy_corpus.json");

    try {
        app.parse(argc, argv);
        if (corpus_gen->parsed()) return do_corpus_gen(spec_path, out_dir, config_path);
        if (train_vq->parsed()) return do_train_vq(config_path);
        if (train_diff->parsed()) return do_train_diffusion(config_path);
        if (synth->parsed()) return do_synthesize(ckpt_dir, text, steps, seed, out_wav);
        if (bench->parsed()) return do_bench(ckpt_dir, steps, repeats, csv_path, threads);
        if (accept->parsed()) {
            AcceptanceOptions opts;
            if (!work_dir.empty()) opts.work_dir = work_dir;
            opts.config_path = (fs::path(data_dir) / "accept.conf").string();
            opts.corpus_spec_path = (fs::path(data_dir) / "toy_corpus.json").string();
            const int failures = run_acceptance(opts, std::cout);
            return failures == 0 ? 0 : 1;
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
