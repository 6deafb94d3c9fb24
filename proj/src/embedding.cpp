#include "tabattack/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace tabattack {

namespace {

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// d(a,b) = 1 - a.b/(|a||b|); accumulates w * dd/da into ga and w * dd/db into gb.
void cosine_distance_grad(std::span<const double> a, std::span<const double> b, double w,
                          std::vector<double>& ga, std::vector<double>& gb) {
    const double na = norm2(a), nb = norm2(b);
    const double ab = dot(a, b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        ga[i] += w * (-(b[i] / (na * nb)) + ab * a[i] / (na * na * na * nb));
        gb[i] += w * (-(a[i] / (na * nb)) + ab * b[i] / (na * nb * nb * nb));
    }
}

}  // namespace

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: size mismatch");
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_distance: zero-norm vector");
    return 1.0 - dot(a, b) / (na * nb);
}

BinningResult equal_frequency_bins(const std::vector<double>& targets, std::size_t bins) {
    if (bins < 2) throw std::invalid_argument("equal_frequency_bins: need bins >= 2");
    const std::size_t n = targets.size();
    if (n < bins) throw std::invalid_argument("equal_frequency_bins: fewer samples than bins");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return targets[a] < targets[b]; });

    // Raw quantile edges; duplicates collapse the bin count.
    std::vector<double> edges;
    const std::size_t base = n / bins;
    const std::size_t extra = n % bins;
    std::vector<std::size_t> boundaries;  // exclusive end of each bin in rank space
    std::size_t pos = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        pos += base + (b < extra ? 1 : 0);
        boundaries.push_back(pos);
    }
    const double top = targets[order[n - 1]];
    for (std::size_t b = 0; b + 1 < bins; ++b) {
        const double edge = targets[order[boundaries[b] - 1]];
        // An edge at the global max would leave the bin above it empty.
        if ((edges.empty() || edge > edges.back()) && edge < top) edges.push_back(edge);
    }

    BinningResult out;
    out.reduced = edges.size() + 1 < bins;
    if (out.reduced)
        std::cerr << "warning: degenerate target ties reduced bin count from " << bins << " to "
                  << edges.size() + 1 << "\n";
    out.bin_edges = edges;
    out.effective_bins = edges.size() + 1;
    out.labels.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto it = std::upper_bound(edges.begin(), edges.end(), targets[i]);
        out.labels[i] = static_cast<int>(it - edges.begin());
    }
    if (!out.reduced) {
        // Exact bin sizes only hold when ranks decide; reassign by rank.
        pos = 0;
        for (std::size_t b = 0; b < bins; ++b) {
            const std::size_t end = boundaries[b];
            for (; pos < end; ++pos) out.labels[order[pos]] = static_cast<int>(b);
        }
    }
    return out;
}

double batch_hard_triplet_loss(const std::vector<std::vector<double>>& embeddings,
                               const std::vector<int>& labels, double margin,
                               std::vector<std::vector<double>>* grad_out, bool soft_margin,
                               TripletBatchStats* stats) {
    const std::size_t n = embeddings.size();
    if (labels.size() != n) throw std::invalid_argument("triplet loss: label count mismatch");
    if (n < 2) throw std::invalid_argument("triplet loss: batch too small");

    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dist[i][j] = dist[j][i] = cosine_distance(embeddings[i], embeddings[j]);

    struct Pick {
        std::size_t hardest_pos, hardest_neg;
        double hinge_arg;
    };
    std::vector<std::pair<std::size_t, Pick>> active;
    std::size_t used = 0, skipped = 0;
    double total = 0.0;
    bool any_negative = false;
    for (std::size_t a = 0; a < n; ++a) {
        double hp = -1.0, hn = std::numeric_limits<double>::infinity();
        std::size_t hp_idx = n, hn_idx = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == a) continue;
            if (labels[j] == labels[a]) {
                if (dist[a][j] > hp) {
                    hp = dist[a][j];
                    hp_idx = j;
                }
            } else {
                any_negative = true;
                if (dist[a][j] < hn) {
                    hn = dist[a][j];
                    hn_idx = j;
                }
            }
        }
        if (hp_idx == n) {
            ++skipped;
            continue;
        }
        if (hn_idx == n) continue;  // handled below: no second class at all
        ++used;
        const double arg = margin + hp - hn;
        const double contrib =
            soft_margin ? std::log1p(std::exp(arg)) : std::max(0.0, arg);
        total += contrib;
        if (contrib > 0.0 || soft_margin) active.push_back({a, {hp_idx, hn_idx, arg}});
    }
    if (!any_negative) throw std::invalid_argument("triplet loss: batch needs >= 2 classes");
    if (skipped > 0)
        std::cerr << "warning: " << skipped << " anchor(s) skipped (single-member class)\n";
    if (stats) {
        stats->anchors_used = used;
        stats->anchors_skipped = skipped;
    }
    if (used == 0) return 0.0;
    const double mean_loss = total / static_cast<double>(used);

    if (grad_out) {
        grad_out->assign(n, std::vector<double>(embeddings[0].size(), 0.0));
        const double inv = 1.0 / static_cast<double>(used);
        for (const auto& [a, pick] : active) {
            const double w =
                soft_margin ? inv / (1.0 + std::exp(-pick.hinge_arg)) : inv;
            cosine_distance_grad(embeddings[a], embeddings[pick.hardest_pos], w, (*grad_out)[a],
                                 (*grad_out)[pick.hardest_pos]);
            cosine_distance_grad(embeddings[a], embeddings[pick.hardest_neg], -w, (*grad_out)[a],
                                 (*grad_out)[pick.hardest_neg]);
        }
    }
    return mean_loss;
}

std::vector<double> EmbeddingModel::embed(std::span<const double> x) const {
    auto e = graph.forward(x);
    const double n = norm2(e);
    if (n > 0.0)
        for (double& v : e) v /= n;
    return e;
}

EmbeddingModel::EmbedTrace EmbeddingModel::embed_trace(std::span<const double> x) const {
    EmbedTrace t;
    t.trace = graph.trace(x);
    t.normalized = t.trace.output();
    t.norm = norm2(t.normalized);
    if (t.norm > 0.0)
        for (double& v : t.normalized) v /= t.norm;
    return t;
}

std::vector<double> EmbeddingModel::backward(const EmbedTrace& t,
                                             std::span<const double> d_norm,
                                             Gradients* grads) const {
    // n = e/|e|  =>  dL/de = (dL/dn - (dL/dn . n) n) / |e|.
    std::vector<double> de(d_norm.begin(), d_norm.end());
    if (t.norm > 0.0) {
        const double proj = dot(d_norm, t.normalized);
        for (std::size_t i = 0; i < de.size(); ++i)
            de[i] = (d_norm[i] - proj * t.normalized[i]) / t.norm;
    }
    return graph.backward(t.trace, de, false, grads);
}

nlohmann::json EmbeddingModel::to_json() const {
    nlohmann::json j;
    j["graph"] = graph.to_json();
    j["e"] = dim;
    j["bin_edges"] = bin_edges;
    return j;
}

EmbeddingModel EmbeddingModel::from_json(const nlohmann::json& j) {
    EmbeddingModel m;
    m.graph = Network::from_json(j.at("graph"));
    m.dim = j.at("e").get<std::size_t>();
    m.bin_edges = j.at("bin_edges").get<std::vector<double>>();
    if (m.graph.output_dim() != m.dim)
        throw std::invalid_argument("embedding artifact dimension mismatch");
    return m;
}

EmbeddingModel train_embedding(const Dataset& train, const Schema& schema,
                               const TripletConfig& cfg, std::size_t embedding_dim) {
    if (embedding_dim < 2) throw std::invalid_argument("embedding dimension must be >= 2");
    if (cfg.classes_per_batch < 2 || cfg.samples_per_class < 2)
        throw std::invalid_argument("triplet batches require P >= 2 and K >= 2");

    const std::size_t d = train.n_features();
    const std::size_t hidden = std::max<std::size_t>(2 * d, 32);
    EmbeddingModel model;
    model.dim = embedding_dim;
    model.graph = Network::make(
        {d, hidden, hidden, embedding_dim},
        {Activation::relu, Activation::relu, Activation::identity}, cfg.seed);

    // Class labels: task labels for classification, quantile bins for regression.
    std::vector<int> labels(train.size());
    if (schema.labels().task == Task::binary_classification) {
        for (std::size_t i = 0; i < train.size(); ++i)
            labels[i] = train.label(i) > 0.5 ? 1 : 0;
    } else {
        auto binning = equal_frequency_bins(train.labels(), cfg.regression_bins);
        labels = binning.labels;
        model.bin_edges = binning.bin_edges;
    }

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < train.size(); ++i) by_class[labels[i]].push_back(i);
    if (by_class.size() < 2)
        throw std::invalid_argument("embedding training requires at least two classes");
    std::vector<int> class_ids;
    for (const auto& [c, members] : by_class) {
        class_ids.push_back(c);
        if (members.size() < cfg.samples_per_class)
            std::cerr << "warning: class " << c << " has " << members.size()
                      << " members; sampling with replacement\n";
    }

    if (cfg.epochs == 0) return model;

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    Optimizer opt(model.graph, cfg.optimizer);
    const std::size_t batch = cfg.classes_per_batch * cfg.samples_per_class;
    const std::size_t batches_per_epoch = std::max<std::size_t>(1, train.size() / batch);

    std::vector<std::size_t> picked(batch);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            // P random classes, K members each.
            std::vector<int> chosen = class_ids;
            std::shuffle(chosen.begin(), chosen.end(), rng);
            chosen.resize(std::min<std::size_t>(cfg.classes_per_batch, chosen.size()));
            std::size_t idx = 0;
            std::vector<int> batch_labels;
            for (int c : chosen) {
                const auto& members = by_class[c];
                if (members.size() >= cfg.samples_per_class) {
                    std::vector<std::size_t> pool = members;
                    std::shuffle(pool.begin(), pool.end(), rng);
                    for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
                        picked[idx++] = pool[k];
                        batch_labels.push_back(c);
                    }
                } else {
                    std::uniform_int_distribution<std::size_t> u(0, members.size() - 1);
                    for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
                        picked[idx++] = members[u(rng)];
                        batch_labels.push_back(c);
                    }
                }
            }

            std::vector<Network::Trace> traces;
            std::vector<std::vector<double>> embeddings;
            traces.reserve(idx);
            for (std::size_t k = 0; k < idx; ++k) {
                traces.push_back(model.graph.trace(train.row(picked[k])));
                embeddings.push_back(traces.back().output());
            }
            std::vector<std::vector<double>> demb;
            batch_hard_triplet_loss(embeddings, batch_labels, cfg.margin, &demb,
                                    cfg.soft_margin);
            Gradients grads = model.graph.zero_grads();
            for (std::size_t k = 0; k < idx; ++k)
                model.graph.backward(traces[k], demb[k], false, &grads);
            opt.apply(model.graph, grads);
        }
    }
    return model;
}

}  // namespace tabattack
