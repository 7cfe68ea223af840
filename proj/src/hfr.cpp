#include "fsiad/hfr.hpp"

#include "fsiad/optim.hpp"
#include "fsiad/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace fsiad {

namespace {

constexpr std::uint64_t kPretrainInit = 0x1D0;
constexpr std::uint64_t kPretrainOrder = 0xE1D;
constexpr std::uint64_t kRealStream = 0xF17;
constexpr std::uint64_t kSynthStream = 0x5F7;

std::vector<std::int64_t> labels_for(const std::vector<std::int64_t>& subjects, const nlohmann::json& classes) {
    std::map<std::int64_t, std::int64_t> index;
    for (std::size_t k = 0; k < classes.size(); ++k) index[classes[k].get<std::int64_t>()] = static_cast<std::int64_t>(k);
    std::vector<std::int64_t> labels;
    labels.reserve(subjects.size());
    for (auto s : subjects) {
        auto it = index.find(s);
        if (it == index.end())
            throw std::invalid_argument("label out of range: subject " + std::to_string(s) +
                                        " is not a class of the recognizer");
        labels.push_back(it->second);
    }
    return labels;
}

Checkpoint recognizer_checkpoint(Recognizer& net, const nlohmann::json& classes, const TrainConfig& cfg) {
    Checkpoint ckpt;
    export_module(ckpt, "F.", *net);
    ckpt.meta["kind"] = "recognizer";
    ckpt.meta["net"] = {{"resolution", net->config().resolution}, {"width_div", net->config().width_div}};
    ckpt.meta["n_classes"] = net->n_classes();
    ckpt.meta["classes"] = classes;
    ckpt.meta["config"] = to_text(cfg);
    return ckpt;
}

}  // namespace

PretrainResult pretrain_recognizer(const Manifest& manifest, const TrainConfig& cfg) {
    validate(cfg);
    const auto pairs = load_pairs(manifest, Split::Train);
    const std::set<std::int64_t> subject_set(pairs.subjects.begin(), pairs.subjects.end());
    if (subject_set.size() < 2)
        throw std::invalid_argument("pretrain_recognizer: need at least 2 training subjects, got " +
                                    std::to_string(subject_set.size()));
    if (pairs.resolution() != cfg.resolution)
        throw std::runtime_error("pretrain_recognizer: dataset resolution differs from configured resolution");

    nlohmann::json classes = nlohmann::json::array();
    for (auto s : subject_set) classes.push_back(s);
    const auto labels = torch::tensor(labels_for(pairs.subjects, classes), torch::kInt64);

    Recognizer net(NetConfig{cfg.resolution, cfg.recognizer_width_div}, static_cast<std::int64_t>(subject_set.size()));
    Rng init_rng(mix_seed(static_cast<std::uint64_t>(cfg.seed), kPretrainInit));
    initialize_parameters(*net, init_rng);
    Adam opt(net->parameters(), cfg.pretrain_lr, 0.9, 0.999);
    Rng order_rng(mix_seed(static_cast<std::uint64_t>(cfg.seed), kPretrainOrder));

    const auto count = pairs.size();
    std::vector<std::int64_t> order(static_cast<std::size_t>(count));
    for (std::int64_t e = 0; e < cfg.pretrain_epochs; ++e) {
        for (std::int64_t i = 0; i < count; ++i) order[i] = i;
        for (std::int64_t i = count - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<std::size_t>(order_rng.below(static_cast<std::uint64_t>(i + 1)))]);
        for (std::int64_t start = 0; start < count; start += cfg.batch_size) {
            const auto n = std::min(cfg.batch_size, count - start);
            const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + start, order.begin() + start + n),
                                           torch::kInt64);
            const auto logits = net->forward(pairs.v.index_select(0, idx)).logits;
            const auto loss = torch::nn::functional::cross_entropy(logits, labels.index_select(0, idx));
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
    }

    PretrainResult result;
    {
        torch::NoGradGuard no_grad;
        std::int64_t correct = 0;
        for (std::int64_t start = 0; start < count; start += 64) {
            const auto n = std::min<std::int64_t>(64, count - start);
            const auto pred = net->forward(pairs.v.narrow(0, start, n)).logits.argmax(1);
            correct += (pred == labels.narrow(0, start, n)).sum().item<std::int64_t>();
        }
        result.train_accuracy = static_cast<double>(correct) / static_cast<double>(count);
    }
    result.checkpoint = recognizer_checkpoint(net, classes, cfg);
    result.checkpoint.meta["train_accuracy"] = result.train_accuracy;
    return result;
}

FinetuneResult finetune_hfr(const Checkpoint& init, const Manifest& real, const Manifest* synthetic,
                            const TrainConfig& cfg) {
    validate(cfg);
    auto net = recognizer_from_checkpoint(init);
    set_trainable(*net, true);
    const auto& classes = init.meta.at("classes");

    const auto pairs = load_pairs(real, Split::Train);
    if (pairs.size() == 0) throw std::runtime_error("finetune_hfr: the training split is empty");
    const auto labels = torch::tensor(labels_for(pairs.subjects, classes), torch::kInt64);

    PairedImages synth;
    const bool augmented = synthetic != nullptr;
    if (augmented) {
        synth = load_pairs(*synthetic, Split::Synthetic);
        if (synth.size() == 0) throw std::runtime_error("finetune_hfr: the synthetic manifest has no pairs");
    }

    Sgd opt(net->parameters(), cfg.sgd_lr, cfg.sgd_momentum, cfg.sgd_weight_decay);
    Rng real_rng(mix_seed(static_cast<std::uint64_t>(cfg.seed), kRealStream));
    Rng synth_rng(mix_seed(static_cast<std::uint64_t>(cfg.seed), kSynthStream));

    FinetuneResult result;
    for (std::int64_t step = 0; step < cfg.hfr_steps; ++step) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.batch_size));
        for (auto& i : idx) i = static_cast<std::int64_t>(real_rng.below(static_cast<std::uint64_t>(pairs.size())));
        const auto sel = torch::tensor(idx, torch::kInt64);
        const auto out_n = net->forward(pairs.n.index_select(0, sel));
        const auto out_v = net->forward(pairs.v.index_select(0, sel));
        const auto ce = loss_ce(out_n.logits, out_v.logits, labels.index_select(0, sel));

        LossReport report = LossReport::zeros();
        report.set("ce", ce.item<double>());
        torch::Tensor loss = ce;
        if (augmented) {
            std::vector<std::int64_t> sidx(static_cast<std::size_t>(cfg.batch_size * cfg.synth_per_real));
            for (auto& i : sidx)
                i = static_cast<std::int64_t>(synth_rng.below(static_cast<std::uint64_t>(synth.size())));
            const auto ssel = torch::tensor(sidx, torch::kInt64);
            const auto f_n = net->forward(synth.n.index_select(0, ssel)).embedding;
            const auto f_v = net->forward(synth.v.index_select(0, ssel)).embedding;
            const auto in = loss_in(f_n, f_v);
            report.set("in", in.item<double>());
            loss = ce + cfg.gamma * in;
        }
        report = aggregate(report, cfg);
        if (const auto bad = report.first_non_finite(); !bad.empty())
            throw std::runtime_error("non-finite loss term '" + bad + "' at HFR step " + std::to_string(step + 1));
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.history.push_back(std::move(report));
    }

    result.checkpoint = recognizer_checkpoint(net, classes, cfg);
    result.checkpoint.meta["optimizer"] = {
        {"type", "sgd"}, {"momentum", opt.momentum()}, {"lr", opt.lr()}, {"weight_decay", opt.weight_decay()}};
    result.checkpoint.meta["augmented"] = augmented;
    result.checkpoint.meta["gamma"] = cfg.gamma;
    result.checkpoint.meta["steps"] = cfg.hfr_steps;
    return result;
}

EmbeddingTable embed_set(const Checkpoint& recognizer, const Manifest& manifest,
                         const std::vector<std::size_t>& rows) {
    auto net = recognizer_from_checkpoint(recognizer);
    torch::NoGradGuard no_grad;
    EmbeddingTable table;
    std::vector<torch::Tensor> emb, feat;
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < rows.size(); start += kChunk) {
        const std::vector<std::size_t> chunk(rows.begin() + static_cast<long>(start),
                                             rows.begin() + static_cast<long>(std::min(rows.size(), start + kChunk)));
        const auto out = net->forward(load_images(manifest, chunk));
        emb.push_back(out.embedding.to(torch::kFloat64));
        feat.push_back(out.features.to(torch::kFloat64));
    }
    for (auto r : rows) {
        table.paths.push_back(manifest.rows[r].path);
        table.subjects.push_back(manifest.rows[r].subject);
        table.domains.push_back(manifest.rows[r].domain);
    }
    table.embeddings = emb.empty() ? torch::empty({0, kCodeDim}, torch::kFloat64) : torch::cat(emb);
    table.features = feat.empty() ? torch::empty({0, kCodeDim}, torch::kFloat64) : torch::cat(feat);
    return table;
}

void write_embedding_csv(const EmbeddingTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << "path,subject,domain";
    for (std::int64_t k = 0; k < kCodeDim; ++k) out << ",e" << k;
    out << '\n';
    const auto acc = table.embeddings.accessor<double, 2>();
    char buf[32];
    for (std::size_t i = 0; i < table.size(); ++i) {
        out << table.paths[i] << ',' << table.subjects[i] << ',' << domain_name(table.domains[i]);
        for (std::int64_t k = 0; k < kCodeDim; ++k) {
            std::snprintf(buf, sizeof buf, "%.9g", acc[static_cast<long>(i)][k]);
            out << ',' << buf;
        }
        out << '\n';
    }
}

double cross_domain_cosine(const Checkpoint& recognizer, const Manifest& manifest, Split split) {
    const auto pairs = manifest.pairs(split);
    if (pairs.empty()) throw std::runtime_error("cross_domain_cosine: no pairs in split");
    std::vector<std::size_t> n_rows, v_rows;
    for (const auto& [n, v] : pairs) {
        n_rows.push_back(n);
        v_rows.push_back(v);
    }
    const auto en = embed_set(recognizer, manifest, n_rows).embeddings;
    const auto ev = embed_set(recognizer, manifest, v_rows).embeddings;
    return (en * ev).sum(1).mean().item<double>();
}

}  // namespace fsiad
