#include "dctts/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dctts/tensor_io.hpp"

namespace dctts {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kStage1Batch = 0xA1;
constexpr uint64_t kStage2Batch = 0xA2;
constexpr uint64_t kStage2Time = 0xA3;
constexpr uint64_t kStage2Noise = 0xA4;
constexpr uint64_t kReseed = 0xA5;

std::string run_dir(const Config& cfg) {
    const std::string dir = cfg.get_string("paths.run_dir");
    fs::create_directories(dir);
    return dir;
}

struct CsvLog {
    std::ofstream out;
    CsvLog(const std::string& path, const std::string& header, bool append) {
        out.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out) throw ConfigError("cannot open loss log: " + path);
        out.precision(17);  // lossless double round trips
        if (!append) out << header << "\n";
    }
};

void check_component(double v, const char* name) {
    if (!std::isfinite(v)) throw NumericError(std::string("NaN loss in component ") + name);
}

}  // namespace

AcousticStats compute_corpus_stats(const ToyCorpus& corpus, const AudioConfig& acfg) {
    std::vector<double> energies, pitches, durations;
    for (const Utterance* u : corpus.split(false)) {
        const MelSpectrogram mel = mel_spectrogram(u->wave, acfg);
        for (const AlignmentSpan& span : u->alignment) {
            const RawSpanFeatures f = span_features(mel, u->wave, span, acfg);
            energies.push_back(f.energy);
            if (f.voiced) pitches.push_back(f.pitch);
            durations.push_back(f.duration_latent);
        }
    }
    auto stats_of = [](const std::vector<double>& xs, double* mean, double* stddev) {
        if (xs.empty()) {
            *mean = 0.0;
            *stddev = 1.0;
            return;
        }
        double m = 0.0;
        for (double x : xs) m += x;
        m /= static_cast<double>(xs.size());
        double v = 0.0;
        for (double x : xs) v += (x - m) * (x - m);
        v /= static_cast<double>(xs.size());
        *mean = m;
        *stddev = std::max(1e-3, std::sqrt(v));
    };
    AcousticStats s;
    stats_of(energies, &s.energy_mean, &s.energy_std);
    stats_of(pitches, &s.pitch_mean, &s.pitch_std);
    stats_of(durations, &s.duration_mean, &s.duration_std);
    return s;
}

std::vector<PreparedUtterance> prepare_utterances(const ToyCorpus& corpus, const SpectrogramVq& vq,
                                                  const AudioConfig& acfg, const AcousticStats& stats,
                                                  bool test_split) {
    std::vector<PreparedUtterance> out;
    for (const Utterance* u : corpus.split(test_split)) {
        PreparedUtterance p;
        p.source = u;
        p.mel = mel_spectrogram(u->wave, acfg);
        p.tokens = vq.tokenize(p.mel);
        p.targets = acoustic_targets(p.mel, u->wave, u->alignment, acfg, stats);
        p.gt_counts.resize(p.targets.duration_latent.size());
        for (size_t i = 0; i < p.gt_counts.size(); ++i)
            p.gt_counts[i] = std::max(1, static_cast<int>(std::llround(p.targets.duration_latent[i])));
        out.push_back(std::move(p));
    }
    return out;
}

Stage1Result train_stage1_vq(const Config& cfg) {
    const std::string dir = run_dir(cfg);
    const AudioConfig acfg = AudioConfig::from(cfg);
    const VqConfig vqc = VqConfig::from(cfg);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    const int steps = static_cast<int>(cfg.get_int("train.stage1_steps", 300));
    const int batch = static_cast<int>(cfg.get_int("train.vq_batch", 4));

    const ToyCorpus corpus = load_corpus(cfg.get_string("paths.corpus_dir"));
    const std::vector<const Utterance*> train = corpus.split(false);
    if (train.empty()) throw ConfigError("stage 1: corpus has no training utterances");

    std::vector<MelSpectrogram> mels;
    mels.reserve(train.size());
    for (const Utterance* u : train) mels.push_back(mel_spectrogram(u->wave, acfg));

    SpectrogramVq vq(vqc, seed);
    // learning rate rule: base rate x gpu count (1) x batch size
    AdamConfig acf;
    acf.lr = cfg.get_double("vq.base_lr", 1e-3) * 1.0 * batch;
    Adam adam(acf);

    const std::string ckpt = (fs::path(dir) / "vq.dckp").string();
    bool resumed = false;
    if (cfg.get_bool("train.resume", false) && fs::exists(ckpt)) {
        auto tensors = checkpoint::load(ckpt);
        checkpoint::restore(tensors, {{"", &vq.params()}}, &adam);
        for (auto& [name, t] : tensors)
            if (name == "opt/vq_usage") vq.usage_state() = t;
        resumed = true;
    }
    const int start = static_cast<int>(adam.step_count());

    CsvLog log((fs::path(dir) / "stage1_losses.csv").string(), "step,recon,codebook,commit,total", resumed);
    std::vector<double> totals;
    for (int step = start; step < steps; ++step) {
        Graph g;
        Graph::Id total = -1;
        double recon_v = 0.0, code_v = 0.0, commit_v = 0.0;
        for (int b = 0; b < batch; ++b) {
            const size_t idx = rng::below(train.size(), seed, kStage1Batch, static_cast<uint64_t>(step), b);
            SpectrogramVq::LossParts parts;
            Graph::Id item = vq.training_loss(g, mels[idx], true, &parts);
            recon_v += g.val(parts.reconstruction).data[0];
            code_v += g.val(parts.codebook).data[0];
            commit_v += g.val(parts.commitment).data[0];
            total = total < 0 ? item : g.add(total, item);
        }
        total = g.scale(total, 1.0 / batch);
        const double total_v = g.val(total).data[0];
        check_component(total_v, "vq_total");
        adam.zero_grads({&vq.params()});
        g.backward(total);
        adam.step({&vq.params()});
        vq.end_of_step_maintenance(seed, step);
        log.out << step << ',' << recon_v / batch << ',' << code_v / batch << ',' << commit_v / batch << ','
                << total_v << "\n";
        totals.push_back(total_v);
    }
    log.out.flush();

    auto tensors = checkpoint::collect({{"", &vq.params()}}, &adam);
    tensors.emplace_back("opt/vq_usage", vq.usage_state());
    checkpoint::save(ckpt, tensors);

    Stage1Result result;
    result.steps = static_cast<int>(totals.size());
    const size_t window = std::max<size_t>(1, totals.size() / 20);
    for (size_t i = 0; i < window && i < totals.size(); ++i) result.initial_loss += totals[i];
    result.initial_loss /= static_cast<double>(std::min(window, totals.size()));
    for (size_t i = totals.size() > window ? totals.size() - window : 0; i < totals.size(); ++i)
        result.final_loss += totals[i];
    result.final_loss /= static_cast<double>(std::min(window, totals.size()));
    result.checkpoint_path = ckpt;
    return result;
}

namespace {

struct Stage2Setup {
    AudioConfig acfg;
    VqConfig vqc;
    std::unique_ptr<SpectrogramVq> vq;
    std::unique_ptr<TextEncoder> text;
    std::unique_ptr<Denoiser> den;
    NoiseSchedule schedule;
    AcousticStats stats;
    ToyCorpus corpus;
};

Stage2Setup stage2_setup(const Config& cfg, bool load_stage2, Adam* adam) {
    Stage2Setup s;
    s.acfg = AudioConfig::from(cfg);
    s.vqc = VqConfig::from(cfg);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    const std::string dir = cfg.get_string("paths.run_dir");

    s.corpus = load_corpus(cfg.get_string("paths.corpus_dir"));
    s.vq = std::make_unique<SpectrogramVq>(s.vqc, seed);
    const std::string vq_ckpt = (fs::path(dir) / "vq.dckp").string();
    if (!fs::exists(vq_ckpt))
        throw ConfigError("stage 2 requires a stage-1 checkpoint at " + vq_ckpt);
    checkpoint::restore(checkpoint::load(vq_ckpt), {{"", &s.vq->params()}}, nullptr);

    TextEncoderConfig tcfg = TextEncoderConfig::from(cfg, s.corpus.inventory.size());
    DenoiserConfig dcfg = DenoiserConfig::from(cfg);
    dcfg.vocab_k = s.vqc.K;
    dcfg.freq = s.vqc.latent_f();
    if (tcfg.width != dcfg.width)
        throw ConfigError("text.width must equal denoiser.width for condition fusion");
    s.text = std::make_unique<TextEncoder>(tcfg, seed + 1);
    s.den = std::make_unique<Denoiser>(dcfg, seed + 2);

    s.schedule = build_linear_schedule(static_cast<int>(cfg.get_int("diffusion.T", 100)), s.vqc.K);
    s.stats = compute_corpus_stats(s.corpus, s.acfg);

    if (load_stage2) {
        const std::string model_ckpt = (fs::path(dir) / "model.dckp").string();
        if (!fs::exists(model_ckpt)) throw ConfigError("missing stage-2 checkpoint at " + model_ckpt);
        Adam probe;
        checkpoint::restore(checkpoint::load(model_ckpt), {{"", &s.text->params()}, {"", &s.den->params()}},
                            adam ? adam : &probe);
        const int64_t trained = adam ? adam->step_count() : probe.step_count();
        if (trained < 1) throw InputError("stage-2 checkpoint is untrained");
    }
    return s;
}

}  // namespace

Stage2Result train_stage2_diffusion(const Config& cfg) {
    const std::string dir = run_dir(cfg);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    const int steps = static_cast<int>(cfg.get_int("train.stage2_steps", 1000));
    const int batch = static_cast<int>(cfg.get_int("train.batch_size", 4));
    const double lambda_tcll = cfg.get_double("contrastive.lambda", 0.1);
    const double acoustic_weight = cfg.get_double("text.loss_weight", 0.1);
    if (batch < 2) throw ConfigError("stage 2 needs batch_size >= 2 for in-batch negatives");

    Stage2Setup s = stage2_setup(cfg, false, nullptr);
    const uint64_t vq_checksum_before = s.vq->params().value_checksum();

    std::vector<PreparedUtterance> data =
        prepare_utterances(s.corpus, *s.vq, s.acfg, s.stats, /*test_split=*/false);
    if (static_cast<int>(data.size()) < batch)
        throw ConfigError("stage 2: corpus smaller than the batch size");

    AdamConfig acf;
    acf.lr = cfg.get_double("adam.lr", 2e-4);
    acf.beta1 = cfg.get_double("adam.beta1", 0.9);
    acf.beta2 = cfg.get_double("adam.beta2", 0.999);
    acf.eps = cfg.get_double("adam.eps", 1e-8);
    Adam adam(acf);

    const std::string ckpt = (fs::path(dir) / "model.dckp").string();
    bool resumed = false;
    if (cfg.get_bool("train.resume", false) && fs::exists(ckpt)) {
        checkpoint::restore(checkpoint::load(ckpt), {{"", &s.text->params()}, {"", &s.den->params()}}, &adam);
        resumed = true;
    }
    const int start = static_cast<int>(adam.step_count());

    write_schedule_csv(s.schedule, (fs::path(dir) / "schedule.csv").string());

    // persist the resolved config (with corpus statistics) beside the model
    {
        Config resolved = cfg;
        s.stats.store(resolved);
        resolved.save((fs::path(dir) / "config.conf").string());
    }

    CsvLog log((fs::path(dir) / "losses.csv").string(), "step,vlb,tcll,acoustic,total", resumed);
    std::vector<double> totals;
    const std::vector<ParamStore*> trainable = {&s.text->params(), &s.den->params()};
    const bool lr_decay = cfg.get_bool("train.lr_decay", false);

    for (int step = start; step < steps; ++step) {
        if (lr_decay) {
            double factor = 1.0;
            if (step >= steps * 17 / 20)
                factor = 0.25;
            else if (step >= steps * 3 / 5)
                factor = 0.5;
            adam.lr() = acf.lr * factor;
        }
        // distinct batch indices, deterministic in (seed, step)
        std::vector<size_t> idx;
        for (int b = 0; static_cast<int>(idx.size()) < batch; ++b) {
            size_t cand = rng::below(data.size(), seed, kStage2Batch, static_cast<uint64_t>(step), b);
            while (std::find(idx.begin(), idx.end(), cand) != idx.end()) cand = (cand + 1) % data.size();
            idx.push_back(cand);
        }

        Graph g;
        struct ItemNodes {
            int t = 0;
            uint64_t noise_seed = 0;
            Graph::Id condition = -1;
            Graph::Id vlb = -1;
            Graph::Id pos_score = -1;
            Graph::Id acoustic = -1;
            Tensor pooled;
        };
        std::vector<ItemNodes> items(static_cast<size_t>(batch));

        for (int b = 0; b < batch; ++b) {
            const PreparedUtterance& u = data[idx[static_cast<size_t>(b)]];
            ItemNodes& it = items[static_cast<size_t>(b)];
            it.t = 1 + static_cast<int>(rng::below(static_cast<uint64_t>(s.schedule.T), seed, kStage2Time,
                                                   static_cast<uint64_t>(step), b));
            it.noise_seed = rng::mix(seed, kStage2Noise, static_cast<uint64_t>(step), b);

            Graph::Id content = s.text->content(g, u.source->phoneme_ids);
            TextEncoder::Acoustic ac = s.text->acoustic(g, content);
            it.condition = s.text->condition(g, content, ac, u.gt_counts, u.tokens.l);
            it.pooled = mean_pool_columns(g.val(it.condition));

            const std::vector<int> x_t = forward_corrupt(s.schedule, it.t, u.tokens.indices, it.noise_seed);
            Graph::Id logits = s.den->logits(g, x_t, it.t, it.condition);
            it.vlb = vlb_loss_op(g, s.schedule, it.t, u.tokens.indices, x_t, logits);
            it.pos_score = sequence_score_from_logits(g, logits, u.tokens.indices);

            // acoustic regression losses on normalized targets
            const int nph = static_cast<int>(u.source->phoneme_ids.size());
            Tensor e_t({nph, 1}), p_t({nph, 1}), d_t({nph, 1}), mask({nph, 1});
            int voiced = 0;
            for (int i = 0; i < nph; ++i) {
                e_t.at(i, 0) = u.targets.energy[static_cast<size_t>(i)];
                p_t.at(i, 0) = u.targets.pitch[static_cast<size_t>(i)];
                d_t.at(i, 0) = u.targets.duration[static_cast<size_t>(i)];
                mask.at(i, 0) = u.targets.voiced[static_cast<size_t>(i)] ? 1.0 : 0.0;
                voiced += u.targets.voiced[static_cast<size_t>(i)] ? 1 : 0;
            }
            Graph::Id e_loss = g.mse(ac.energy, g.input(e_t));
            Graph::Id p_diff = g.mul(g.sub(ac.pitch, g.input(p_t)), g.input(mask));
            Graph::Id p_loss = g.scale(g.sum_all(g.mul(p_diff, p_diff)), 1.0 / std::max(1, voiced));
            Graph::Id d_norm = g.scale(g.add_scalar(ac.duration, -s.stats.duration_mean), 1.0 / s.stats.duration_std);
            Graph::Id d_loss = g.mse(d_norm, g.input(d_t));
            it.acoustic = g.scale(g.add(e_loss, g.add(p_loss, d_loss)), acoustic_weight);
        }

        // step-wise TCLL: negatives are the other minibatch items, scored at
        // the item's own timestep and corruption key
        Graph::Id total = -1;
        double vlb_v = 0.0, tcll_v = 0.0, acoustic_v = 0.0;
        for (int b = 0; b < batch; ++b) {
            const ItemNodes& it = items[static_cast<size_t>(b)];
            Graph::Id item_loss = g.add(it.vlb, it.acoustic);
            if (lambda_tcll != 0.0) {
                std::vector<Graph::Id> neg_scores;
                std::vector<double> weights;
                for (int j = 0; j < batch; ++j) {
                    if (j == b) continue;
                    const PreparedUtterance& uj = data[idx[static_cast<size_t>(j)]];
                    neg_scores.push_back(sequence_score(g, *s.den, s.schedule, it.t, uj.tokens.indices,
                                                        it.condition, it.noise_seed));
                    weights.push_back(similarity_weight(it.pooled, items[static_cast<size_t>(j)].pooled));
                }
                Graph::Id tcll = tcll_from_scores(g, it.pos_score, neg_scores, weights);
                tcll_v += g.val(tcll).data[0];
                item_loss = g.add(item_loss, g.scale(tcll, lambda_tcll));
            }
            vlb_v += g.val(it.vlb).data[0];
            acoustic_v += g.val(it.acoustic).data[0];
            total = total < 0 ? item_loss : g.add(total, item_loss);
        }
        total = g.scale(total, 1.0 / batch);

        check_component(vlb_v, "vlb");
        check_component(tcll_v, "tcll");
        check_component(acoustic_v, "acoustic");
        const double total_v = g.val(total).data[0];
        check_component(total_v, "total");

        adam.zero_grads(trainable);
        g.backward(total);
        adam.step(trainable);

        log.out << step << ',' << vlb_v / batch << ',' << tcll_v / batch << ',' << acoustic_v / batch << ','
                << total_v << "\n";
        totals.push_back(total_v);
    }
    log.out.flush();

    if (s.vq->params().value_checksum() != vq_checksum_before)
        throw NumericError("stage 2 must not update frozen vq parameters");

    checkpoint::save(ckpt, checkpoint::collect({{"", &s.text->params()}, {"", &s.den->params()}}, &adam));

    Stage2Result result;
    result.steps = static_cast<int>(totals.size());
    const size_t window = std::max<size_t>(1, totals.size() / 10);
    for (size_t i = 0; i < window && i < totals.size(); ++i) result.mean_first_window += totals[i];
    result.mean_first_window /= static_cast<double>(std::min(window, totals.size()));
    for (size_t i = totals.size() > window ? totals.size() - window : 0; i < totals.size(); ++i)
        result.mean_last_window += totals[i];
    result.mean_last_window /= static_cast<double>(std::min(window, totals.size()));
    result.checkpoint_path = ckpt;
    return result;
}

TrainedModels load_models(const Config& cfg, bool require_stage2) {
    TrainedModels m;
    Adam adam;
    Stage2Setup s = stage2_setup(cfg, require_stage2, &adam);
    m.audio = s.acfg;
    m.vq_cfg = s.vqc;
    m.schedule = std::move(s.schedule);
    m.vq = std::move(s.vq);
    m.text = std::move(s.text);
    m.denoiser = std::move(s.den);
    m.corpus = std::move(s.corpus);
    m.resolved = cfg;
    // prefer the stats frozen at training time over recomputation
    const fs::path saved_cfg = fs::path(cfg.get_string("paths.run_dir")) / "config.conf";
    if (fs::exists(saved_cfg)) {
        Config run_cfg = Config::from_file(saved_cfg.string());
        m.stats = AcousticStats::from(run_cfg);
    } else {
        m.stats = s.stats;
    }
    return m;
}

SynthesisResult synthesize(TrainedModels& models, const std::string& text, int steps, uint64_t seed) {
    const std::vector<int> ids = g2p(text, models.corpus.lexicon, models.corpus.inventory);
    const int f = models.vq_cfg.latent_f();
    const int max_l = models.denoiser->config().max_positions / f;
    const TextEncoder::Encoded enc = models.text->encode_text(ids, max_l);
    const int l = enc.columns.dim(0);
    if (l < 1) throw InputError("synthesize: zero-length condition");

    auto logits_fn = [&](const std::vector<int>& x_t, int t) {
        return models.denoiser->logits_value(x_t, t, enc.columns);
    };
    SynthesisResult result;
    result.latent_l = l;
    result.tokens = sample_tokens(logits_fn, models.schedule, steps, l * f, seed);

    TokenGrid grid;
    grid.indices = result.tokens;
    grid.f = f;
    grid.l = l;
    grid.vocab = models.vq_cfg.K;
    grid.orig_frames = l * models.vq_cfg.time_factor();
    result.mel = models.vq->decode(grid);

    const int gl_iters = static_cast<int>(models.resolved.get_int("sampling.gl_iters", 32));
    result.wave = griffin_lim(result.mel, gl_iters, models.audio);
    return result;
}

void write_synthesis_artifacts(const SynthesisResult& result, const TrainedModels& models,
                               const std::string& wav_path) {
    wav::write(wav_path, result.wave);
    const fs::path base(wav_path);
    fs::path stem = base;
    stem.replace_extension();
    tensor_io::save(stem.string() + ".mel.dct1", result.mel.values);
    TokenGridFile tokens;
    tokens.f = models.vq_cfg.latent_f();
    tokens.l = result.latent_l;
    tokens.vocab = models.vq_cfg.K;
    tokens.indices = result.tokens;
    token_io::save(stem.string() + ".tokens.dctk", tokens);
}

std::function<MelSpectrogram(const std::string&, int, uint64_t)> make_mel_generator(TrainedModels& models) {
    return [&models](const std::string& text, int steps, uint64_t seed) {
        const std::vector<int> ids = g2p(text, models.corpus.lexicon, models.corpus.inventory);
        const int f = models.vq_cfg.latent_f();
        const TextEncoder::Encoded enc =
            models.text->encode_text(ids, models.denoiser->config().max_positions / f);
        const int l = enc.columns.dim(0);
        auto logits_fn = [&](const std::vector<int>& x_t, int t) {
            return models.denoiser->logits_value(x_t, t, enc.columns);
        };
        const std::vector<int> tokens = sample_tokens(logits_fn, models.schedule, steps, l * f, seed);
        TokenGrid grid;
        grid.indices = tokens;
        grid.f = f;
        grid.l = l;
        grid.vocab = models.vq_cfg.K;
        grid.orig_frames = l * models.vq_cfg.time_factor();
        return models.vq->decode(grid);
    };
}

double mel_distance(const MelSpectrogram& a, const MelSpectrogram& b) {
    // distance over the union of frames; the shorter grid is padded at the
    // normalized silence floor, so duration mismatch counts against a pair
    const int frames = std::max(a.frames(), b.frames());
    const int ch = std::min(a.channels(), b.channels());
    if (frames < 1 || ch < 1) throw InputError("mel_distance: empty grids");
    double sum = 0.0;
    for (int c = 0; c < ch; ++c)
        for (int t = 0; t < frames; ++t) {
            const double va = t < a.frames() ? a.values.at(c, t) : -1.0;
            const double vb = t < b.frames() ? b.values.at(c, t) : -1.0;
            const double d = va - vb;
            sum += d * d;
        }
    return sum / (static_cast<double>(frames) * ch);
}

}  // namespace dctts
