#include "seqchess/probes.h"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "seqchess/parallel.h"
#include "seqchess/rng.h"

namespace seqchess {

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'P', 'R', 'O', 'B', 'E', '1'};

template <class T>
void put(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, float>) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        bits = u;
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("truncated probe dataset");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (std::is_same_v<T, float>) {
        const auto u = static_cast<std::uint32_t>(bits);
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    } else {
        return static_cast<T>(bits);
    }
}

int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& r) {
    Eigen::Index i;
    r.maxCoeff(&i);
    return static_cast<int>(i);
}

// Rows of one split, standardised.
Eigen::MatrixXd design(const ProbeDataset& data, int layer, const std::vector<std::size_t>& rows,
                       const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
    const int d = data.dims()[static_cast<std::size_t>(layer)];
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& h = data.examples()[rows[r]].hidden[static_cast<std::size_t>(layer)];
        for (int j = 0; j < d; ++j) x(static_cast<Eigen::Index>(r), j) = (h[static_cast<std::size_t>(j)] - mean(j)) / scale(j);
    }
    return x;
}

void softmax_rows(Eigen::MatrixXd& z) {
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double m = z.row(r).maxCoeff();
        z.row(r) = (z.row(r).array() - m).exp();
        z.row(r) /= z.row(r).sum();
    }
}

double accuracy(const LinearProbe& p, const Eigen::MatrixXd& x, const ProbeDataset& data,
                const std::vector<std::size_t>& rows) {
    if (rows.empty()) return 0.0;
    std::uint64_t hit = 0;
    for (int s = 0; s < 64; ++s) {
        const Eigen::MatrixXd z = (x * p.w[static_cast<std::size_t>(s)]).rowwise() + p.b[static_cast<std::size_t>(s)].transpose();
        for (std::size_t r = 0; r < rows.size(); ++r)
            hit += argmax_row(z.row(static_cast<Eigen::Index>(r))) == data.examples()[rows[r]].labels[static_cast<std::size_t>(s)];
    }
    return static_cast<double>(hit) / (64.0 * static_cast<double>(rows.size()));
}

}  // namespace

BoardLabels board_labels(const chess::BoardState& state) {
    BoardLabels out{};
    for (std::size_t sq = 0; sq < 64; ++sq) out[sq] = static_cast<std::uint8_t>(state.squares()[sq]);
    return out;
}

void ProbeDataset::add(ProbeExample ex) {
    if (examples_.empty() && dims_.empty())
        for (const auto& h : ex.hidden) dims_.push_back(static_cast<int>(h.size()));
    if (ex.hidden.size() != dims_.size()) throw std::invalid_argument("probe example has the wrong layer count");
    for (std::size_t l = 0; l < dims_.size(); ++l)
        if (static_cast<int>(ex.hidden[l].size()) != dims_[l])
            throw std::invalid_argument("probe example dimension mismatch at layer " + std::to_string(l));
    examples_.push_back(std::move(ex));
}

std::size_t ProbeDataset::count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(examples_.begin(), examples_.end(), [&](const ProbeExample& e) { return e.split == s; }));
}

void ProbeDataset::assign_splits(std::uint64_t seed, double train, double validation) {
    if (train < 0 || validation < 0 || train + validation > 1) throw std::invalid_argument("bad split fractions");
    std::vector<std::size_t> order(examples_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "probe-split"));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n = static_cast<double>(order.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train * n));
    const auto n_val = static_cast<std::size_t>(std::llround(validation * n));
    for (std::size_t i = 0; i < order.size(); ++i)
        examples_[order[i]].split = i < n_train ? Split::Train : i < n_train + n_val ? Split::Validation : Split::Test;
}

void ProbeDataset::save(std::ostream& out) const {
    out.write(kMagic, 8);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dims_.size()));
    for (int d : dims_) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(out, examples_.size());
    for (const auto& e : examples_) {
        for (const auto& h : e.hidden)
            for (float f : h) put<float>(out, f);
        out.write(reinterpret_cast<const char*>(e.labels.data()), 64);
        const auto tag = static_cast<std::uint8_t>((e.standard ? 1 : 0) | (static_cast<int>(e.phase) << 1) |
                                                   (static_cast<int>(e.split) << 3));
        put<std::uint8_t>(out, tag);
    }
    if (!out) throw std::runtime_error("failed to write probe dataset");
}

ProbeDataset ProbeDataset::load(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) throw std::runtime_error("not a probe dataset");
    std::vector<int> dims(get<std::uint32_t>(in));
    for (auto& d : dims) d = static_cast<int>(get<std::uint32_t>(in));
    ProbeDataset ds(dims);
    const auto n = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n; ++i) {
        ProbeExample e;
        for (int d : dims) {
            std::vector<float> h(static_cast<std::size_t>(d));
            for (auto& f : h) f = get<float>(in);
            e.hidden.push_back(std::move(h));
        }
        if (!in.read(reinterpret_cast<char*>(e.labels.data()), 64)) throw std::runtime_error("truncated probe dataset");
        for (auto l : e.labels)
            if (l >= kProbeClasses) throw std::runtime_error("bad probe label");
        const auto tag = get<std::uint8_t>(in);
        if ((tag >> 1 & 3) > 2 || (tag >> 3 & 3) > 2) throw std::runtime_error("bad probe slice tag");
        e.standard = tag & 1;
        e.phase = static_cast<chess::Phase>(tag >> 1 & 3);
        e.split = static_cast<Split>(tag >> 3 & 3);
        ds.add(std::move(e));
    }
    return ds;
}

ProbeDataset build_probe_dataset(const PredictorFactory& factory, std::span<const DecisionPoint> points,
                                 const StandardPositionIndex* standard, unsigned workers) {
    std::vector<ProbeExample> out(points.size());
    std::vector<std::unique_ptr<Predictor>> pool(std::max(1u, workers));
    PredictOptions opt;
    opt.want_hidden = true;
    parallel_for(points.size(), workers, [&](unsigned w, std::size_t i) {
        if (!pool[w]) pool[w] = factory();
        const auto& p = points[i];
        auto rec = pool[w]->predict(p.context, opt);
        if (rec.hidden.empty()) throw PredictorError(pool[w]->name() + " exposes no hidden states");
        std::sort(rec.hidden.begin(), rec.hidden.end(),
                  [](const HiddenState& a, const HiddenState& b) { return a.layer < b.layer; });
        auto& e = out[i];
        for (auto& h : rec.hidden) e.hidden.push_back(std::move(h.vec));
        e.labels = board_labels(p.state);
        e.standard = standard && standard->is_standard(p.state.key());
        e.phase = p.phase;
    });
    ProbeDataset ds;
    for (auto& e : out) ds.add(std::move(e));
    return ds;
}

nlohmann::json ProbeTrainConfig::to_json() const {
    return {{"epochs", epochs}, {"learning_rate", learning_rate}, {"batch", batch}, {"l2", l2}, {"standardize", standardize}, {"seed", seed}};
}

double probe_loss_and_gradient(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const Eigen::MatrixXd& x,
                               std::span<const std::uint8_t> labels, double l2, Eigen::MatrixXd& grad_w,
                               Eigen::VectorXd& grad_b) {
    if (static_cast<std::size_t>(x.rows()) != labels.size() || x.cols() != w.rows() || w.cols() != kProbeClasses ||
        b.size() != kProbeClasses)
        throw std::invalid_argument("probe shape mismatch");
    Eigen::MatrixXd p = (x * w).rowwise() + b.transpose();
    softmax_rows(p);
    const double n = static_cast<double>(x.rows());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const auto y = labels[static_cast<std::size_t>(r)];
        loss -= std::log(std::max(p(r, y), 1e-300));
        p(r, y) -= 1.0;
    }
    p /= n;
    grad_w = x.transpose() * p + l2 * w;
    grad_b = p.colwise().sum().transpose();
    return loss / n + 0.5 * l2 * w.squaredNorm();
}

BoardLabels LinearProbe::predict(std::span<const float> hidden) const {
    if (static_cast<int>(hidden.size()) != dim) throw std::invalid_argument("probe dimension mismatch");
    Eigen::RowVectorXd x(dim);
    for (int j = 0; j < dim; ++j) x(j) = (hidden[static_cast<std::size_t>(j)] - mean(j)) / scale(j);
    BoardLabels out{};
    for (std::size_t s = 0; s < 64; ++s) {
        const Eigen::RowVectorXd z = x * w[s] + b[s].transpose();
        out[s] = static_cast<std::uint8_t>(argmax_row(z));
    }
    return out;
}

LinearProbe train_probe(const ProbeDataset& data, int layer, const ProbeTrainConfig& cfg) {
    if (layer < 0 || static_cast<std::size_t>(layer) >= data.layers()) throw std::invalid_argument("no such probe layer");
    if (cfg.batch == 0 || cfg.epochs < 0) throw std::invalid_argument("bad probe training config");
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.examples()[i].split == Split::Train) train.push_back(i);
        if (data.examples()[i].split == Split::Validation) val.push_back(i);
    }
    if (train.empty()) throw std::invalid_argument("probe dataset has no training examples");

    LinearProbe p;
    p.layer = layer;
    p.dim = data.dims()[static_cast<std::size_t>(layer)];
    p.config = cfg;
    p.mean = Eigen::VectorXd::Zero(p.dim);
    p.scale = Eigen::VectorXd::Zero(p.dim);
    for (auto i : train)
        for (int j = 0; j < p.dim; ++j) p.mean(j) += data.examples()[i].hidden[static_cast<std::size_t>(layer)][static_cast<std::size_t>(j)];
    p.mean /= static_cast<double>(train.size());
    for (auto i : train)
        for (int j = 0; j < p.dim; ++j) {
            const double d = data.examples()[i].hidden[static_cast<std::size_t>(layer)][static_cast<std::size_t>(j)] - p.mean(j);
            p.scale(j) += d * d;
        }
    for (int j = 0; j < p.dim; ++j) {
        const double sd = std::sqrt(p.scale(j) / static_cast<double>(train.size()));
        p.scale(j) = cfg.standardize && sd > 1e-8 ? sd : 1.0;
    }
    for (std::size_t s = 0; s < 64; ++s) {
        p.w[s] = Eigen::MatrixXd::Zero(p.dim, kProbeClasses);
        p.b[s] = Eigen::VectorXd::Zero(kProbeClasses);
    }

    const Eigen::MatrixXd x = design(data, layer, train, p.mean, p.scale);
    std::vector<std::array<std::uint8_t, 64>> y;
    for (auto i : train) y.push_back(data.examples()[i].labels);

    // Batch order per epoch, shared by all squares.
    std::vector<std::vector<std::size_t>> orders(static_cast<std::size_t>(cfg.epochs));
    for (int e = 0; e < cfg.epochs; ++e) {
        auto& o = orders[static_cast<std::size_t>(e)];
        o.resize(train.size());
        std::iota(o.begin(), o.end(), 0);
        Rng rng(derive_seed(cfg.seed, "probe-epoch", static_cast<std::uint64_t>(e)));
        for (std::size_t i = o.size(); i > 1; --i) std::swap(o[i - 1], o[rng.below(i)]);
    }

    // Fixed groups of squares share one product per batch; the partition does
    // not depend on the worker count, so neither do the results.
    constexpr std::size_t kGroup = 8;
    parallel_for(64 / kGroup, cfg.workers, [&](unsigned, std::size_t g) {
        const auto cols = static_cast<Eigen::Index>(kGroup * kProbeClasses);
        Eigen::MatrixXd w(p.dim, cols);
        Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(cols);
        w.setZero();
        Eigen::MatrixXd xb, z;
        for (const auto& o : orders)
            for (std::size_t start = 0; start < o.size(); start += cfg.batch) {
                const std::size_t end = std::min(o.size(), start + cfg.batch);
                const auto rows = static_cast<Eigen::Index>(end - start);
                xb.resize(rows, p.dim);
                for (std::size_t r = start; r < end; ++r)
                    xb.row(static_cast<Eigen::Index>(r - start)) = x.row(static_cast<Eigen::Index>(o[r]));
                z.noalias() = xb * w;
                z.rowwise() += b;
                for (std::size_t k = 0; k < kGroup; ++k) {
                    auto blk = z.middleCols(static_cast<Eigen::Index>(k * kProbeClasses), kProbeClasses);
                    for (Eigen::Index r = 0; r < rows; ++r) {
                        const double m = blk.row(r).maxCoeff();
                        blk.row(r) = (blk.row(r).array() - m).exp();
                        blk.row(r) /= blk.row(r).sum();
                        blk(r, y[o[start + static_cast<std::size_t>(r)]][g * kGroup + k]) -= 1.0;
                    }
                }
                z /= static_cast<double>(rows);
                w -= cfg.learning_rate * (xb.transpose() * z + cfg.l2 * w);
                b -= cfg.learning_rate * z.colwise().sum();
            }
        for (std::size_t k = 0; k < kGroup; ++k) {
            p.w[g * kGroup + k] = w.middleCols(static_cast<Eigen::Index>(k * kProbeClasses), kProbeClasses);
            p.b[g * kGroup + k] = b.segment(static_cast<Eigen::Index>(k * kProbeClasses), kProbeClasses).transpose();
        }
    });

    p.train_accuracy = accuracy(p, x, data, train);
    p.validation_accuracy = accuracy(p, design(data, layer, val, p.mean, p.scale), data, val);
    return p;
}

nlohmann::json ProbeReport::to_json() const {
    return {{"layer", layer},
            {"overall", overall.to_json()},
            {"standard", standard.to_json()},
            {"non_standard", non_standard.to_json()},
            {"opening", by_phase[0].to_json()},
            {"middlegame", by_phase[1].to_json()},
            {"endgame", by_phase[2].to_json()}};
}

ProbeReport probe_accuracy(const LinearProbe& probe, const ProbeDataset& data, Split split) {
    if (static_cast<std::size_t>(probe.layer) >= data.layers() ||
        data.dims()[static_cast<std::size_t>(probe.layer)] != probe.dim)
        throw std::invalid_argument("probe and dataset are not layer-compatible");
    ProbeReport r;
    r.layer = probe.layer;
    for (const auto& e : data.examples()) {
        if (e.split != split) continue;
        const auto pred = probe.predict(e.hidden[static_cast<std::size_t>(probe.layer)]);
        Proportion one;
        for (std::size_t s = 0; s < 64; ++s) one.add(pred[s] == e.labels[s]);
        r.overall.merge(one);
        (e.standard ? r.standard : r.non_standard).merge(one);
        r.by_phase[static_cast<std::size_t>(e.phase)].merge(one);
    }
    return r;
}

std::vector<ProbeReport> layer_sweep(const ProbeDataset& data, const ProbeTrainConfig& cfg) {
    std::vector<ProbeReport> out;
    for (std::size_t l = 0; l < data.layers(); ++l)
        out.push_back(probe_accuracy(train_probe(data, static_cast<int>(l), cfg), data, Split::Test));
    return out;
}

void write_layer_csv(std::ostream& out, std::span<const ProbeReport> reports) {
    out << "layer,slice,accuracy,ci_lo,ci_hi,n\n";
    for (const auto& r : reports) {
        auto row = [&](const char* name, const Proportion& p) {
            out << r.layer << ',' << name << ',';
            if (const auto v = p.value()) {
                const auto iv = p.ci();
                out << *v << ',' << iv.lo << ',' << iv.hi;
            } else {
                out << ",,";
            }
            out << ',' << p.n << '\n';
        };
        row("overall", r.overall);
        row("standard", r.standard);
        row("non_standard", r.non_standard);
        row("opening", r.by_phase[0]);
        row("middlegame", r.by_phase[1]);
        row("endgame", r.by_phase[2]);
    }
}

}  // namespace seqchess
