#include "ccgl/dgc_classifier.hpp"

#include "ccgl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ccgl {

using namespace ccgl::ad;

std::vector<int> PopulationGraph::mask_rows(Split s) const {
    std::vector<int> rows;
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (split[i] == s) rows.push_back(static_cast<int>(i));
    }
    return rows;
}

Vector patient_embedding(const Matrix& views) {
    if (views.rows() == 0) throw Error("patient_embedding: no view embeddings");
    const Vector mean = views.colwise().mean().transpose();
    const double norm = mean.norm();
    if (!(norm > 1e-12)) throw NumericError("zero-norm aggregate");
    return mean / norm;
}

Vector patient_embedding(std::span<const Vector> views) {
    if (views.empty()) throw Error("patient_embedding: no view embeddings");
    Matrix m(static_cast<Eigen::Index>(views.size()), views.front().size());
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (views[i].size() != m.cols()) throw ShapeError("patient_embedding: width mismatch");
        m.row(static_cast<Eigen::Index>(i)) = views[i].transpose();
    }
    return patient_embedding(m);
}

EdgeList knn_edges(const Matrix& features, int k) {
    const int p = static_cast<int>(features.rows());
    if (k < 1 || k > p - 1) {
        throw Error("knn_edges: k = " + std::to_string(k) + " outside [1, " + std::to_string(p - 1) + "]");
    }
    EdgeList edges;
    edges.reserve(static_cast<std::size_t>(p) * static_cast<std::size_t>(k));
    std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(p - 1));
    for (int i = 0; i < p; ++i) {
        std::size_t at = 0;
        for (int j = 0; j < p; ++j) {
            if (j == i) continue;
            dist[at++] = {(features.row(i) - features.row(j)).squaredNorm(), j};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        for (int n = 0; n < k; ++n) edges.push_back({i, dist[static_cast<std::size_t>(n)].second});
    }
    return edges;
}

int effective_k(const DgcConfig& cfg, Eigen::Index nodes) {
    return std::max(1, std::min(cfg.k, static_cast<int>(nodes) - 1));
}

ParamStore make_dgc(int in_features, const DgcConfig& cfg, std::uint64_t seed) {
    if (cfg.hidden.empty()) throw Error("dgc: need at least one edge-conv layer");
    std::mt19937_64 rng(seed ^ 0x2545f4914f6cdd1dULL);
    ParamStore store;
    // Sum aggregation multiplies message scale by k per layer; start the
    // message map small enough that initial logits stay unsaturated.
    const double message_scale = 1.0 / static_cast<double>(std::max(1, cfg.k));
    int width = in_features;
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
        const std::string prefix = "dgc.l" + std::to_string(l + 1);
        const int out = cfg.hidden[l];
        store.add(prefix + ".w1", glorot(2 * width, out, rng));
        store.add(prefix + ".b1", Matrix::Zero(1, out));
        store.add(prefix + ".w2", glorot(out, out, rng) * message_scale);
        store.add(prefix + ".b2", Matrix::Zero(1, out));
        width = out;
    }
    store.add("dgc.head.w", glorot(width, 2, rng));
    store.add("dgc.head.b", Matrix::Zero(1, 2));
    return store;
}

Var edge_conv(const Var& features, const EdgeList& edges, const std::string& prefix, Aggregation agg) {
    Tape& tape = features.tape();
    const Eigen::Index p = features.rows();
    std::vector<int> src, dst;
    src.reserve(edges.size());
    dst.reserve(edges.size());
    std::vector<std::vector<int>> by_node(static_cast<std::size_t>(p));
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto& edge = edges[e];
        if (edge.src < 0 || edge.src >= p || edge.dst < 0 || edge.dst >= p) {
            throw ShapeError("edge_conv: edge endpoint out of range");
        }
        src.push_back(edge.src);
        dst.push_back(edge.dst);
        by_node[static_cast<std::size_t>(edge.src)].push_back(static_cast<int>(e));
    }
    for (Eigen::Index i = 0; i < p; ++i) {
        if (by_node[static_cast<std::size_t>(i)].empty()) {
            throw Error("edge_conv: node " + std::to_string(i) + " has no out-edge");
        }
    }
    const SparseMatrix gather_src = gather_matrix(src, p);
    Var own = spmm(gather_src, features);
    Var other = spmm(gather_matrix(dst, p), features);
    const std::array<Var, 2> parts{own, sub(other, own)};
    Var h = relu(add(matmul(concat_cols(parts), tape.param(prefix + ".w1")), tape.param(prefix + ".b1")));
    Var messages = add(matmul(h, tape.param(prefix + ".w2")), tape.param(prefix + ".b2"));

    if (agg == Aggregation::Sum) {
        return spmm(SparseMatrix(gather_src.transpose()), messages);
    }
    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(p));
    for (Eigen::Index i = 0; i < p; ++i) {
        rows.push_back(max_rows(spmm(gather_matrix(by_node[static_cast<std::size_t>(i)], messages.rows()), messages)));
    }
    return concat_rows(rows);
}

Matrix edge_conv(const Matrix& features, const EdgeList& edges, const ParamStore& params, const std::string& prefix,
                 Aggregation agg) {
    Tape tape(params);
    return edge_conv(tape.constant(features), edges, prefix, agg).value();
}

double focal_loss(double prob_true_class, double gamma) {
    if (!(gamma >= 0.0)) throw Error("focal_loss: gamma must be non-negative");
    const double pr = std::clamp(prob_true_class, 1e-12, 1.0);
    return -std::pow(1.0 - pr, gamma) * std::log(pr);
}

namespace {

// Row-wise max of a matrix, held constant.
Matrix row_peak(const Matrix& m) {
    return m.rowwise().maxCoeff();
}

Var log_softmax(const Var& logits) {
    Var peak = logits.tape().constant(row_peak(logits.value()));
    Var shifted = sub(logits, peak);
    return sub(shifted, log(sum_cols(exp(shifted))));
}

} // namespace

Var focal_loss(const Var& logits, std::span<const int> labels, std::span<const int> rows, double gamma) {
    if (!(gamma >= 0.0)) throw Error("focal_loss: gamma must be non-negative");
    if (rows.empty()) throw Error("focal_loss: no labelled rows");
    Tape& tape = logits.tape();
    Matrix onehot = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), logits.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int y = labels[static_cast<std::size_t>(rows[i])];
        if (y < 0 || y >= logits.cols()) throw Error("focal_loss: label out of range");
        onehot(static_cast<Eigen::Index>(i), y) = 1.0;
    }
    Var picked = spmm(gather_matrix(rows, logits.rows()), log_softmax(logits));
    Var log_pr = clamp(sum_cols(mul(picked, tape.constant(onehot))), std::log(1e-12), 0.0);
    Var weight = pow(add_scalar(scale(exp(log_pr), -1.0), 1.0), gamma);
    return scale(mean(mul(weight, log_pr)), -1.0);
}

DgcForward dgc_forward(Tape& tape, const Matrix& features, const DgcConfig& cfg, const std::vector<EdgeList>* frozen) {
    if (frozen && frozen->size() != cfg.hidden.size()) {
        throw Error("dgc_forward: need one frozen edge set per layer");
    }
    const int k = effective_k(cfg, features.rows());
    DgcForward out;
    Var x = tape.constant(features);
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
        EdgeList edges = frozen ? (*frozen)[l] : knn_edges(x.value(), k);
        x = edge_conv(x, edges, "dgc.l" + std::to_string(l + 1), cfg.aggregation);
        out.edges.push_back(std::move(edges));
    }
    out.hidden = x;
    out.logits = add(matmul(x, tape.param("dgc.head.w")), tape.param("dgc.head.b"));
    out.probs = exp(log_softmax(out.logits));
    return out;
}

Matrix dgc_probabilities(const PopulationGraph& pop, const ParamStore& params, const DgcConfig& cfg) {
    Tape tape(params);
    return dgc_forward(tape, pop.node_features, cfg).probs.value();
}

DgcResult train_dgc(const PopulationGraph& pop, const DgcConfig& cfg, std::uint64_t seed) {
    const auto train = pop.mask_rows(Split::Train);
    const auto val = pop.mask_rows(Split::Val);
    if (train.empty()) throw Error("train_dgc: empty training mask");
    if (pop.labels.size() != static_cast<std::size_t>(pop.node_features.rows()) ||
        pop.split.size() != pop.labels.size()) {
        throw ShapeError("train_dgc: labels/splits do not match node count");
    }
    bool val_has_both = false;
    {
        int pos = 0;
        for (int r : val) pos += pop.labels[static_cast<std::size_t>(r)];
        val_has_both = pos > 0 && pos < static_cast<int>(val.size());
    }
    std::vector<int> val_labels;
    for (int r : val) val_labels.push_back(pop.labels[static_cast<std::size_t>(r)]);

    DgcResult result;
    result.params = make_dgc(static_cast<int>(pop.node_features.cols()), cfg, seed);
    ParamStore best = result.params;
    double best_auc = -1.0;
    double best_loss = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Tape tape(result.params);
        DgcForward fwd = dgc_forward(tape, pop.node_features, cfg);
        Var loss = focal_loss(fwd.logits, pop.labels, train, cfg.gamma);
        DgcEpoch e;
        e.epoch = epoch;
        e.train_loss = loss.scalar();
        if (!std::isfinite(e.train_loss)) {
            throw NumericError("train_dgc: non-finite loss at epoch " + std::to_string(epoch));
        }
        bool better = false;
        if (!val.empty()) {
            const Matrix& probs = fwd.probs.value();
            double vl = 0.0;
            std::vector<double> scores;
            for (int r : val) {
                const int y = pop.labels[static_cast<std::size_t>(r)];
                vl += focal_loss(probs(r, y), cfg.gamma);
                scores.push_back(probs(r, 1));
            }
            e.val_loss = vl / static_cast<double>(val.size());
            if (val_has_both) e.val_auc = auc(scores, val_labels);
            const double a = e.val_auc.value_or(0.0);
            better = a > best_auc || (a == best_auc && e.val_loss < best_loss);
            if (better) {
                best_auc = a;
                best_loss = e.val_loss;
            }
        } else {
            better = true;
        }
        if (better) {
            best = result.params;
            result.best_epoch = epoch;
        }
        GradMap grads = tape.backward(loss);
        adam_step(result.params, grads, cfg.lr);
        result.history.push_back(e);
    }
    result.params = std::move(best);
    return result;
}

} // namespace ccgl
