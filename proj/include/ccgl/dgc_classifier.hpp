#ifndef CCGL_DGC_CLASSIFIER_HPP
#define CCGL_DGC_CLASSIFIER_HPP

#include "ccgl/signal_ingest.hpp"
#include "ccgl/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ccgl {

/// Directed population-graph edge src -> dst.
struct DirectedEdge {
    int src = 0;
    int dst = 0;

    friend bool operator==(const DirectedEdge&, const DirectedEdge&) = default;
};

using EdgeList = std::vector<DirectedEdge>;

struct PopulationGraph {
    Matrix node_features; ///< P x d
    std::vector<int> labels;
    std::vector<Split> split; ///< Train/val/test membership per node.
    EdgeList current_edges;

    std::vector<int> mask_rows(Split s) const;
};

enum class Aggregation { Sum, Max };

struct DgcConfig {
    int k = 20;
    double gamma = 2.0;
    std::vector<int> hidden{64, 64}; ///< Output width of each edge-conv layer.
    Aggregation aggregation = Aggregation::Sum;
    int epochs = 150;
    double lr = 5e-3;
};

/// Mean of the view embeddings, renormalised to unit length.
Vector patient_embedding(std::span<const Vector> views);
Vector patient_embedding(const Matrix& views); ///< One view per row.

/// k nearest neighbours (Euclidean, self excluded) of every row, ties broken
/// toward the lower index. Edges are grouped by source in ascending order.
EdgeList knn_edges(const Matrix& features, int k);

/// Parameter layout: dgc.l{1,2}.w1/b1/w2/b2 and dgc.head.w/b.
ParamStore make_dgc(int in_features, const DgcConfig& cfg, std::uint64_t seed);

/// Row i = aggregate over edges i -> m of phi(v_i || v_m - v_i) with
/// phi = linear -> relu -> linear, parameters under `prefix`.
Var edge_conv(const Var& features, const EdgeList& edges, const std::string& prefix, Aggregation agg);
Matrix edge_conv(const Matrix& features, const EdgeList& edges, const ParamStore& params,
                 const std::string& prefix, Aggregation agg = Aggregation::Sum);

/// -(1 - pr)^gamma log(pr), pr clamped to [1e-12, 1].
double focal_loss(double prob_true_class, double gamma);

/// Mean focal loss over `rows` given P x 2 logits.
Var focal_loss(const Var& logits, std::span<const int> labels, std::span<const int> rows, double gamma);

struct DgcForward {
    Var logits;  ///< P x 2
    Var probs;   ///< P x 2 softmax
    Var hidden;  ///< output of the last edge-conv layer
    std::vector<EdgeList> edges; ///< edge set used by each layer
};

/// Rebuilds KNN edges before every layer from the current features unless
/// `frozen` supplies the per-layer edge sets.
DgcForward dgc_forward(Tape& tape, const Matrix& features, const DgcConfig& cfg,
                       const std::vector<EdgeList>* frozen = nullptr);

Matrix dgc_probabilities(const PopulationGraph& pop, const ParamStore& params, const DgcConfig& cfg);

/// k clamped to P - 1.
int effective_k(const DgcConfig& cfg, Eigen::Index nodes);

struct DgcEpoch {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::optional<double> val_auc;
};

struct DgcResult {
    ParamStore params;
    std::vector<DgcEpoch> history;
    int best_epoch = 0;
};

/// Transductive training: every node takes part in message passing, only
/// train-split labels enter the loss, val drives model selection.
DgcResult train_dgc(const PopulationGraph& pop, const DgcConfig& cfg, std::uint64_t seed);

} // namespace ccgl

#endif // CCGL_DGC_CLASSIFIER_HPP
