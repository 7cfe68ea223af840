#include "fsiad/trainer.hpp"

#include "fsiad/image_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace fsiad {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0x7A1;

std::vector<torch::Tensor> params_of(const torch::nn::Module& m) { return m.parameters(true); }

double median_of(const torch::Tensor& t) {
    auto v = t.detach().to(torch::kFloat64).flatten();
    auto sorted = std::get<0>(v.sort());
    const auto n = sorted.numel();
    if (n == 0) return 0.0;
    return n % 2 ? sorted[n / 2].item<double>()
                 : 0.5 * (sorted[n / 2 - 1].item<double>() + sorted[n / 2].item<double>());
}

void require_finite(const LossReport& report, std::int64_t iteration) {
    const auto bad = report.first_non_finite();
    if (!bad.empty())
        throw std::runtime_error("non-finite loss term '" + bad + "' at iteration " + std::to_string(iteration));
}

NetConfig net_from_meta(const nlohmann::json& meta) {
    NetConfig net;
    net.resolution = meta.at("net").at("resolution").get<std::int64_t>();
    net.width_div = meta.at("net").at("width_div").get<std::int64_t>();
    return net;
}

nlohmann::json net_to_json(const NetConfig& net) {
    return {{"resolution", net.resolution}, {"width_div", net.width_div}};
}

}  // namespace

FsiadModels FsiadModels::create(const NetConfig& net, Recognizer e_id, Rng& rng) {
    FsiadModels m;
    m.e_id = std::move(e_id);
    m.enc_n = AttributeEncoder(net);
    m.enc_v = AttributeEncoder(net);
    m.gen = Generator(net);
    m.disc = Discriminator(net);
    initialize_parameters(*m.enc_n, rng);
    initialize_parameters(*m.enc_v, rng);
    initialize_parameters(*m.gen, rng);
    initialize_parameters(*m.disc, rng);
    set_trainable(*m.e_id, false);
    return m;
}

void FsiadModels::to(torch::ScalarType dtype) {
    e_id->to(dtype);
    enc_n->to(dtype);
    enc_v->to(dtype);
    gen->to(dtype);
    disc->to(dtype);
}

void FsiadModels::export_to(Checkpoint& ckpt) const {
    export_module(ckpt, "E_id.", *e_id);
    export_module(ckpt, "E_attr_N.", *enc_n);
    export_module(ckpt, "E_attr_V.", *enc_v);
    export_module(ckpt, "G.", *gen);
    export_module(ckpt, "D.", *disc);
    ckpt.meta["net"] = net_to_json(gen->config());
    ckpt.meta["e_id_net"] = net_to_json(e_id->config());
    ckpt.meta["e_id_classes"] = e_id->n_classes();
}

FsiadModels FsiadModels::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.meta.value("kind", "") != "fsiad")
        throw CheckpointError(CheckpointError::Kind::Format, "not an FSIAD checkpoint");
    const auto net = net_from_meta(ckpt.meta);
    NetConfig id_net;
    id_net.resolution = ckpt.meta.at("e_id_net").at("resolution").get<std::int64_t>();
    id_net.width_div = ckpt.meta.at("e_id_net").at("width_div").get<std::int64_t>();
    FsiadModels m;
    m.e_id = Recognizer(id_net, ckpt.meta.at("e_id_classes").get<std::int64_t>());
    m.enc_n = AttributeEncoder(net);
    m.enc_v = AttributeEncoder(net);
    m.gen = Generator(net);
    m.disc = Discriminator(net);
    import_module(ckpt, "E_id.", *m.e_id);
    import_module(ckpt, "E_attr_N.", *m.enc_n);
    import_module(ckpt, "E_attr_V.", *m.enc_v);
    import_module(ckpt, "G.", *m.gen);
    import_module(ckpt, "D.", *m.disc);
    set_trainable(*m.e_id, false);
    return m;
}

TrainState::TrainState(FsiadModels m, const TrainConfig& cfg, Rng r) : models(std::move(m)), rng(std::move(r)) {
    const auto enc = concat_params({params_of(*models.enc_n), params_of(*models.enc_v)});
    opt_iad = std::make_unique<Adam>(enc, cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    opt_fsm = std::make_unique<Adam>(concat_params({enc, params_of(*models.gen)}), cfg.adam_lr, cfg.adam_beta1,
                                     cfg.adam_beta2, cfg.adam_eps);
    opt_d = std::make_unique<Adam>(params_of(*models.disc), cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2,
                                   cfg.adam_eps);
}

IterationResult fsiad_iteration(TrainState& state, const TrainingSample& batch, const TrainConfig& cfg) {
    auto& m = state.models;
    const auto iteration = state.iteration + 1;
    const auto dtype = m.gen->parameters().front().scalar_type();
    const auto i_n = batch.i_n.data().to(dtype), i_v = batch.i_v.data().to(dtype);
    const auto x_n = batch.x_n.data().to(dtype), x_v = batch.x_v.data().to(dtype);
    const auto b = i_n.size(0);
    const auto ssim_cfg = SsimConfig::for_side(i_n.size(2));
    auto draw = [&](const GaussianPosterior& post) {
        return reparameterize(post, standard_normal(state.rng, post.mu.sizes(), dtype));
    };

    LossReport report = LossReport::zeros();

    // (a) identity code of the source pair; the identity encoder is frozen.
    torch::Tensor z_id;
    {
        torch::NoGradGuard no_grad;
        z_id = combine_identity(m.e_id->forward(i_n).embedding, m.e_id->forward(i_v).embedding);
    }
    {
        const auto post_in = m.enc_n->forward(i_n);
        const auto post_iv = m.enc_v->forward(i_v);
        const auto z_in = draw(post_in);
        const auto z_iv = draw(post_iv);

        // (b) disentanglement + distribution learning.
        const auto dis = loss_dis(z_id, z_in, z_iv);
        const auto kl = loss_kl(post_in, post_iv);
        const auto iad = cfg.lambda_dis * dis + kl;
        report.set("dis", dis.item<double>());
        report.set("kl", kl.item<double>());
        require_finite(report, iteration);
        state.opt_iad->zero_grad();
        iad.backward();
        state.opt_iad->step();
    }

    // (c) re-encode with the updated encoders; both synthesis branches in one generator pass.
    const auto post_in = m.enc_n->forward(i_n);
    const auto post_iv = m.enc_v->forward(i_v);
    const auto post_xn = m.enc_n->forward(x_n);
    const auto post_xv = m.enc_v->forward(x_v);
    const auto z_in = draw(post_in);
    const auto z_iv = draw(post_iv);
    const auto z_xn = draw(post_xn);
    const auto z_xv = draw(post_xv);
    const auto synth = m.gen->forward(z_id.repeat({4, 1}), torch::cat({z_in, z_iv, z_xn, z_xv}));
    const auto rec_n = synth.narrow(0, 0, b), rec_v = synth.narrow(0, b, b);
    const auto xh_n = synth.narrow(0, 2 * b, b), xh_v = synth.narrow(0, 3 * b, b);
    const auto real = torch::cat({i_n, i_v});
    const auto fake = torch::cat({xh_n, xh_v});

    // (d) discriminator step on detached synthetic images.
    IterationResult result;
    {
        const auto d_real = m.disc->forward(real);
        const auto d_fake = m.disc->forward(fake.detach());
        const auto adv_d = loss_adv_d(d_real, d_fake);
        report.set("adv_d", adv_d.item<double>());
        result.d_real_median = median_of(d_real);
        result.d_fake_median = median_of(d_fake);
        require_finite(report, iteration);
        state.opt_d->zero_grad();
        adv_d.backward();
        state.opt_d->step();
    }

    // (e) encoders + generator with the discriminator frozen.
    set_trainable(*m.disc, false);
    const auto adv_g = loss_adv_g(m.disc->forward(fake));
    set_trainable(*m.disc, true);
    const auto rec = loss_rec(i_n, i_v, rec_n, rec_v);
    const auto emb = m.e_id->forward(synth).embedding;
    const auto ip = loss_ip(z_id, {emb.narrow(0, 0, b), emb.narrow(0, b, b), emb.narrow(0, 2 * b, b),
                                   emb.narrow(0, 3 * b, b)});
    const auto zhat_n = m.enc_n->forward(xh_n).mu;
    const auto zhat_v = m.enc_v->forward(xh_v).mu;
    const auto attr = loss_attr(z_xn, z_xv, zhat_n, zhat_v);
    const auto sim = loss_sim(torch::cat({x_n, x_v}), fake, cfg.alpha, ssim_cfg);
    const auto integration = ip + attr + sim;
    const auto fsm = cfg.int_only ? integration : rec + cfg.lambda_int * integration + cfg.lambda_adv * adv_g;

    report.set("rec", rec.item<double>());
    report.set("ip", ip.item<double>());
    report.set("attr", attr.item<double>());
    report.set("sim", sim.item<double>());
    report.set("adv_g", adv_g.item<double>());
    report = aggregate(report, cfg);
    require_finite(report, iteration);

    state.opt_fsm->zero_grad();
    fsm.backward();
    state.opt_fsm->step();
    // Parameters of D received no gradient in (e); clear anything left from (d).
    state.opt_d->zero_grad();

    state.iteration = iteration;
    result.report = std::move(report);
    return result;
}

Recognizer recognizer_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
    if (ckpt.meta.value("kind", "") != "recognizer")
        throw CheckpointError(CheckpointError::Kind::Format, "not a recognizer checkpoint");
    Recognizer r(net_from_meta(ckpt.meta), ckpt.meta.at("n_classes").get<std::int64_t>());
    import_module(ckpt, prefix, *r);
    return r;
}

Checkpoint make_fsiad_checkpoint(const TrainState& state, const TrainConfig& cfg) {
    Checkpoint ckpt;
    state.models.export_to(ckpt);
    ckpt.meta["kind"] = "fsiad";
    ckpt.meta["config"] = to_text(cfg);
    ckpt.meta["iteration"] = state.iteration;
    ckpt.meta["rng_state"] = state.rng.state();
    return ckpt;
}

FsiadRun train_fsiad(const Manifest& manifest, const Checkpoint& recognizer, const TrainConfig& cfg,
                     const std::filesystem::path& out_dir) {
    validate(cfg);
    std::filesystem::create_directories(out_dir / "checkpoints");
    const auto pairs = load_pairs(manifest, Split::Train);
    if (pairs.size() == 0) throw std::runtime_error("train_fsiad: the training split is empty");
    if (pairs.resolution() != cfg.resolution)
        throw std::runtime_error("train_fsiad: dataset resolution " + std::to_string(pairs.resolution()) +
                                 " differs from configured " + std::to_string(cfg.resolution));

    NetConfig net{cfg.resolution, cfg.width_div};
    Rng init_rng(mix_seed(static_cast<std::uint64_t>(cfg.seed), kInitStream));
    TrainState state(FsiadModels::create(net, recognizer_from_checkpoint(recognizer), init_rng), cfg,
                     Rng(mix_seed(static_cast<std::uint64_t>(cfg.seed), kTrainStream)));

    std::ofstream losses(out_dir / "fsiad_losses.csv", std::ios::trunc);
    std::ofstream disc(out_dir / "disc_stats.csv", std::ios::trunc);
    if (!losses || !disc) throw std::runtime_error("cannot write training logs under '" + out_dir.string() + "'");
    LossReport::zeros().write_csv_header(losses);
    disc << "iteration,d_real_median,d_fake_median\n";

    const std::int64_t every =
        cfg.checkpoint_every > 0 ? cfg.checkpoint_every : std::max<std::int64_t>(1, cfg.iterations / 10);
    FsiadRun run;
    for (std::int64_t i = 0; i < cfg.iterations; ++i) {
        const auto batch = sample_training_pairs(pairs, state.rng, cfg.batch_size);
        auto result = fsiad_iteration(state, batch, cfg);
        result.report.write_csv_row(losses, state.iteration);
        char line[128];
        std::snprintf(line, sizeof line, "%lld,%.9g,%.9g\n", static_cast<long long>(state.iteration),
                      result.d_real_median, result.d_fake_median);
        disc << line;
        if (state.iteration % every == 0) {
            char name[64];
            std::snprintf(name, sizeof name, "iter_%06lld.ckpt", static_cast<long long>(state.iteration));
            save_checkpoint(make_fsiad_checkpoint(state, cfg), out_dir / "checkpoints" / name);
        }
        run.history.push_back(std::move(result));
    }
    run.final_checkpoint = make_fsiad_checkpoint(state, cfg);
    save_checkpoint(run.final_checkpoint, out_dir / "fsiad.ckpt");
    return run;
}

SwapResult swap_attributes(FsiadModels& models, const torch::Tensor& src_n, const torch::Tensor& src_v,
                           const torch::Tensor& ref_n, const torch::Tensor& ref_v) {
    torch::NoGradGuard no_grad;
    SwapResult out;
    constexpr std::int64_t kChunk = 32;
    std::vector<torch::Tensor> ns, vs;
    for (std::int64_t start = 0; start < src_n.size(0); start += kChunk) {
        const auto count = std::min(kChunk, src_n.size(0) - start);
        const auto z_id = combine_identity(models.e_id->forward(src_n.narrow(0, start, count)).embedding,
                                           models.e_id->forward(src_v.narrow(0, start, count)).embedding);
        ns.push_back(models.gen->forward(z_id, models.enc_n->forward(ref_n.narrow(0, start, count)).mu));
        vs.push_back(models.gen->forward(z_id, models.enc_v->forward(ref_v.narrow(0, start, count)).mu));
    }
    out.n = torch::cat(ns);
    out.v = torch::cat(vs);
    return out;
}

double disentanglement_score(const Checkpoint& fsiad, const Manifest& manifest, Split split, Rng& rng) {
    auto models = FsiadModels::from_checkpoint(fsiad);
    const auto pairs = load_pairs(manifest, split);
    if (pairs.size() == 0) throw std::runtime_error("disentanglement_score: no pairs in split");
    torch::NoGradGuard no_grad;
    double total = 0.0;
    constexpr std::int64_t kChunk = 32;
    for (std::int64_t start = 0; start < pairs.size(); start += kChunk) {
        const auto count = std::min(kChunk, pairs.size() - start);
        const auto n = pairs.n.narrow(0, start, count), v = pairs.v.narrow(0, start, count);
        const auto z_id = combine_identity(models.e_id->forward(n).embedding, models.e_id->forward(v).embedding);
        for (const auto& z : {reparameterize(models.enc_n->forward(n), rng).values(),
                              reparameterize(models.enc_v->forward(v), rng).values()})
            total += torch::cosine_similarity(z_id.to(torch::kFloat64), z.to(torch::kFloat64), 1).abs().sum().item<double>();
    }
    return total / static_cast<double>(2 * pairs.size());
}

Manifest synthesize_pairs(const Checkpoint& fsiad, const Manifest& manifest, std::int64_t n, Rng& rng,
                          const std::filesystem::path& out_dir) {
    if (n <= 0) throw std::invalid_argument("synthesize_pairs: n must be positive");
    auto models = FsiadModels::from_checkpoint(fsiad);
    const auto pairs = load_pairs(manifest, Split::Train);
    if (pairs.size() == 0) throw std::runtime_error("synthesize_pairs: the training split is empty");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) throw std::runtime_error("cannot create '" + (out_dir / "images").string() + "': " + ec.message());

    torch::NoGradGuard no_grad;
    Manifest out;
    out.root = out_dir;
    out.has_pair_id = true;
    constexpr std::int64_t kChunk = 16;
    for (std::int64_t start = 0; start < n; start += kChunk) {
        const auto count = std::min(kChunk, n - start);
        const auto batch = sample_training_pairs(pairs, rng, count);
        const auto z_id = combine_identity(models.e_id->forward(batch.i_n.data()).embedding,
                                           models.e_id->forward(batch.i_v.data()).embedding);
        const auto z_xn = reparameterize(models.enc_n->forward(batch.x_n.data()), rng).values();
        const auto z_xv = reparameterize(models.enc_v->forward(batch.x_v.data()), rng).values();
        const auto synth_n = models.gen->forward(z_id, z_xn);
        const auto synth_v = models.gen->forward(z_id, z_xv);
        for (std::int64_t k = 0; k < count; ++k) {
            const auto pair_id = start + k;
            const auto& ref = pairs.rows[static_cast<std::size_t>(batch.x_index[k])];
            for (Domain d : {Domain::N, Domain::V}) {
                char name[64];
                std::snprintf(name, sizeof name, "images/p%06lld_%s.png", static_cast<long long>(pair_id),
                              d == Domain::N ? "N" : "V");
                write_png(out_dir / name, quantize((d == Domain::N ? synth_n : synth_v)[k]));
                ManifestRow row;
                row.path = name;
                row.subject = -1;
                row.domain = d;
                row.attr = manifest.rows[d == Domain::N ? ref.first : ref.second].attr;
                row.split = Split::Synthetic;
                row.pair_id = pair_id;
                out.rows.push_back(std::move(row));
            }
        }
    }
    write_manifest(out, out_dir / "manifest.tsv");
    return out;
}

}  // namespace fsiad
