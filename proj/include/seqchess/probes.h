#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seqchess/chess.h"
#include "seqchess/evaluation.h"
#include "seqchess/predictor.h"

namespace seqchess {

inline constexpr int kProbeClasses = chess::kPieceClasses;

/// 0 empty, 1..6 white pawn..king, 7..12 black pawn..king; index a1 = 0.
using BoardLabels = std::array<std::uint8_t, 64>;
BoardLabels board_labels(const chess::BoardState& state);

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

struct ProbeExample {
    std::vector<std::vector<float>> hidden;  // one vector per layer
    BoardLabels labels{};
    bool standard = false;
    chess::Phase phase = chess::Phase::Opening;
    Split split = Split::Train;
};

class ProbeDataset {
public:
    ProbeDataset() = default;
    explicit ProbeDataset(std::vector<int> dims) : dims_(std::move(dims)) {}

    /// Throws if the layer count or a dimension differs from the dataset's.
    void add(ProbeExample ex);
    const std::vector<ProbeExample>& examples() const { return examples_; }
    const std::vector<int>& dims() const { return dims_; }
    std::size_t layers() const { return dims_.size(); }
    std::size_t size() const { return examples_.size(); }
    std::size_t count(Split s) const;

    /// Seeded shuffle, then the first `train` fraction is Train, the next
    /// `validation` fraction Validation, the rest Test.
    void assign_splits(std::uint64_t seed, double train = 0.8, double validation = 0.1);

    /// Little-endian: "SQPROBE1", u32 layers, u32 dims, u64 count, then per
    /// record f32 vectors, 64 label bytes, tag byte (bit 0 standard, bits 1-2
    /// phase, bits 3-4 split).
    void save(std::ostream& out) const;
    static ProbeDataset load(std::istream& in);

private:
    std::vector<int> dims_;
    std::vector<ProbeExample> examples_;
};

/// Queries the predictor with want_hidden at each point. Throws PredictorError
/// if it reports no hidden layers.
ProbeDataset build_probe_dataset(const PredictorFactory& factory, std::span<const DecisionPoint> points,
                                 const StandardPositionIndex* standard = nullptr, unsigned workers = 1);

struct ProbeTrainConfig {
    int epochs = 10;
    double learning_rate = 0.05;
    std::size_t batch = 64;
    double l2 = 0.0;
    bool standardize = true;  // otherwise inputs are only centred
    std::uint64_t seed = 0;
    unsigned workers = 1;

    nlohmann::json to_json() const;
};

/// Softmax cross-entropy for one square: returns the mean loss over rows of
/// x and fills the gradients. w is dim x 13, b has 13 entries.
double probe_loss_and_gradient(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const Eigen::MatrixXd& x,
                               std::span<const std::uint8_t> labels, double l2, Eigen::MatrixXd& grad_w,
                               Eigen::VectorXd& grad_b);

struct LinearProbe {
    int layer = 0;
    int dim = 0;
    Eigen::VectorXd mean, scale;  // input standardisation from the train split
    std::array<Eigen::MatrixXd, 64> w;
    std::array<Eigen::VectorXd, 64> b;
    ProbeTrainConfig config;
    double train_accuracy = 0.0;
    double validation_accuracy = 0.0;

    BoardLabels predict(std::span<const float> hidden) const;
};

/// Per-square multinomial logistic regression by mini-batch gradient descent.
/// Every square sees the same batch order, so results do not depend on workers.
LinearProbe train_probe(const ProbeDataset& data, int layer, const ProbeTrainConfig& cfg);

struct ProbeReport {
    int layer = 0;
    Proportion overall, standard, non_standard;
    std::array<Proportion, 3> by_phase;

    nlohmann::json to_json() const;
};

ProbeReport probe_accuracy(const LinearProbe& probe, const ProbeDataset& data, Split split = Split::Test);

/// Trains and evaluates one probe per layer.
std::vector<ProbeReport> layer_sweep(const ProbeDataset& data, const ProbeTrainConfig& cfg);
void write_layer_csv(std::ostream& out, std::span<const ProbeReport> reports);

}  // namespace seqchess
