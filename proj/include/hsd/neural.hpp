#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsd/common.hpp"
#include "hsd/vectorizer.hpp"

namespace hsd {

// ---------------------------------------------------------------------------
// Training schedule (adaptive learning-rate decay with a floor)

struct TrainingSchedule {
    double initial_rate = 0.05;   // rate used during epoch 1
    double decay_rate = 0.20;
    double rate_floor = 0.01;
    int initial_patience = 40;    // remaining-epoch budget granted at start and on checkpoint
    int max_epochs = 200;
    int batch_size = 1024;

    void validate() const {
        if (initial_rate <= 0) throw ConfigError("initial learning rate must be positive");
        if (decay_rate < 0) throw ConfigError("decay rate must be non-negative");
        if (rate_floor <= 0) throw ConfigError("learning-rate floor must be positive");
        if (initial_patience < 1) throw ConfigError("patience must be at least 1");
        if (max_epochs < 1) throw ConfigError("max epochs must be at least 1");
        if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    }
};

// Decayed rate after `ep` completed epochs; ep=0 gives the initial rate.
// Epoch e >= 1 therefore trains with learning_rate(s, e - 1).
inline double learning_rate(const TrainingSchedule& s, int ep) {
    if (ep < 0) throw ConfigError("epoch index must be non-negative");
    return std::max(s.rate_floor, s.initial_rate / (1.0 + s.decay_rate * ep));
}

// Drives the training loop: a patience budget that is consumed every epoch
// and reset to its initial value whenever a checkpoint fires. A checkpoint
// fires when validation error and accuracy BOTH beat the best values seen so
// far and the epoch is not overfitting (validation accuracy above training
// accuracy). The learning rate decays after every epoch until it reaches the
// floor. Factored out of train() so the control flow can be driven by
// scripted metric sequences in tests.
class EarlyStopController {
public:
    explicit EarlyStopController(const TrainingSchedule& schedule)
        : schedule_(schedule), budget_(schedule.initial_patience),
          rate_(schedule.initial_rate) {
        schedule_.validate();
    }

    bool should_continue() const { return budget_ > 0 && epoch_ < schedule_.max_epochs; }

    // Call when an epoch starts; returns the rate to fit with.
    double begin_epoch() {
        --budget_;
        ++epoch_;
        return rate_;
    }

    struct Outcome {
        bool improved = false;       // both validation metrics beat the bests
        bool checkpointed = false;   // improved and not overfitting
    };

    // Call with the metrics of the epoch that just ran.
    Outcome observe(double val_error, double val_accuracy, double train_accuracy) {
        Outcome out;
        if (val_error < best_error_ && val_accuracy > best_accuracy_) {
            out.improved = true;
            best_error_ = val_error;
            best_accuracy_ = val_accuracy;
            bool overfitting = val_accuracy > train_accuracy;
            if (!overfitting) {
                out.checkpointed = true;
                best_epoch_ = epoch_;
                budget_ = schedule_.initial_patience;
            }
        }
        if (rate_ > schedule_.rate_floor) rate_ = learning_rate(schedule_, epoch_);
        return out;
    }

    int epoch() const { return epoch_; }
    int best_epoch() const { return best_epoch_; }   // 0 until a checkpoint fires
    int budget() const { return budget_; }
    double rate() const { return rate_; }
    double best_error() const { return best_error_; }
    double best_accuracy() const { return best_accuracy_; }

private:
    TrainingSchedule schedule_;
    int budget_ = 0;
    int epoch_ = 0;
    int best_epoch_ = 0;
    double rate_ = 0;
    double best_error_ = std::numeric_limits<double>::infinity();
    double best_accuracy_ = -std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Model

struct SequenceClassifierConfig {
    int vocab_size = 0;        // embedding rows; valid indices are [0, vocab_size)
    int sequence_length = 30;
    int embedding_dim = 30;
    int recurrent_units = 30;
    int dense_units = 30;      // 0 disables the dense layer
    int output_classes = 2;

    void validate() const {
        if (vocab_size < 1) throw ConfigError("vocab size must be at least 1");
        if (sequence_length < 1) throw ConfigError("sequence length must be at least 1");
        if (embedding_dim < 1) throw ConfigError("embedding dim must be at least 1");
        if (recurrent_units < 1) throw ConfigError("recurrent units must be at least 1");
        if (dense_units < 0) throw ConfigError("dense units must be non-negative");
        if (output_classes != 2 && output_classes != 3)
            throw ConfigError("output classes must be 2 or 3");
    }

    // 2-class pairs with binary cross-entropy, 3-class with categorical; on
    // one-hot targets over a softmax both reduce to the same expression.
    std::string loss_name() const {
        return output_classes == 2 ? "binary-cross-entropy" : "categorical-cross-entropy";
    }

    int feature_width() const { return 2 * recurrent_units; }
    int output_input_width() const { return dense_units > 0 ? dense_units : feature_width(); }

    bool operator==(const SequenceClassifierConfig&) const = default;
};

namespace detail {

inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& x) {
    return 1.0 / (1.0 + (-x).exp());
}

}  // namespace detail

// Embedding -> bi-directional recurrent layer -> optional rectifier dense ->
// softmax. The recurrent cell is a standard long short-term memory cell:
// input/forget/output gates with logistic-sigmoid activation, tanh candidate
// and tanh cell-output squashing. The two directions each read the full
// sequence; their final hidden states are concatenated (forward first).
class SequenceClassifier {
public:
    SequenceClassifier() = default;

    explicit SequenceClassifier(const SequenceClassifierConfig& config) : config_(config) {
        config_.validate();
        const int d = config_.embedding_dim;
        const int u = config_.recurrent_units;
        embedding_.setZero(config_.vocab_size, d);
        fwd_w_.setZero(4 * u, d);
        fwd_r_.setZero(4 * u, u);
        fwd_b_.setZero(4 * u);
        bwd_w_.setZero(4 * u, d);
        bwd_r_.setZero(4 * u, u);
        bwd_b_.setZero(4 * u);
        if (config_.dense_units > 0) {
            dense_w_.setZero(config_.dense_units, config_.feature_width());
            dense_b_.setZero(config_.dense_units);
        }
        out_w_.setZero(config_.output_classes, config_.output_input_width());
        out_b_.setZero(config_.output_classes);
    }

    // Embeddings uniform in [-0.05, 0.05]; other weights uniform in
    // +-1/sqrt(fan-in); biases zero.
    void init_weights(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        auto fill_uniform = [&rng](Eigen::MatrixXd& m, double bound) {
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
        };
        fill_uniform(embedding_, 0.05);
        fill_uniform(fwd_w_, 1.0 / std::sqrt(static_cast<double>(fwd_w_.cols())));
        fill_uniform(fwd_r_, 1.0 / std::sqrt(static_cast<double>(fwd_r_.cols())));
        fill_uniform(bwd_w_, 1.0 / std::sqrt(static_cast<double>(bwd_w_.cols())));
        fill_uniform(bwd_r_, 1.0 / std::sqrt(static_cast<double>(bwd_r_.cols())));
        if (config_.dense_units > 0)
            fill_uniform(dense_w_, 1.0 / std::sqrt(static_cast<double>(dense_w_.cols())));
        fill_uniform(out_w_, 1.0 / std::sqrt(static_cast<double>(out_w_.cols())));
        fwd_b_.setZero();
        bwd_b_.setZero();
        if (config_.dense_units > 0) dense_b_.setZero();
        out_b_.setZero();
    }

    const SequenceClassifierConfig& config() const { return config_; }

    // Class probabilities for one sequence; softmax output sums to 1.
    std::vector<double> forward(const std::vector<int>& indices) const {
        Eigen::MatrixXd probs = predict_proba({indices});
        std::vector<double> out(static_cast<std::size_t>(probs.rows()));
        for (Eigen::Index k = 0; k < probs.rows(); ++k)
            out[static_cast<std::size_t>(k)] = probs(k, 0);
        return out;
    }

    std::vector<double> forward(const EncodedSample& sample) const {
        return forward(sample.indices);
    }

    // Probabilities column-per-sample (output_classes x n).
    Eigen::MatrixXd predict_proba(const std::vector<std::vector<int>>& batch) const {
        Cache cache;
        return run_forward(batch, cache, /*keep_cache=*/false);
    }

    // Mean cross-entropy of the labels under the model, no gradients.
    double loss(const std::vector<std::vector<int>>& batch,
                const std::vector<int>& labels) const {
        Cache cache;
        run_forward(batch, cache, /*keep_cache=*/false);
        double total = 0;
        for (Eigen::Index b = 0; b < cache.log_probs.cols(); ++b)
            total -= cache.log_probs(labels[static_cast<std::size_t>(b)], b);
        return total / static_cast<double>(batch.size());
    }

    struct EvalMetrics {
        double error = 0;      // mean cross-entropy
        double accuracy = 0;   // fraction of argmax hits
    };

    EvalMetrics evaluate(const std::vector<std::vector<int>>& sequences,
                         const std::vector<int>& labels, int batch_size) const {
        if (sequences.empty()) throw DataError("cannot evaluate on an empty set");
        double total_loss = 0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < sequences.size();
             start += static_cast<std::size_t>(batch_size)) {
            std::size_t stop = std::min(sequences.size(),
                                        start + static_cast<std::size_t>(batch_size));
            std::vector<std::vector<int>> chunk(sequences.begin() + start,
                                                sequences.begin() + stop);
            Cache cache;
            Eigen::MatrixXd probs = run_forward(chunk, cache, /*keep_cache=*/false);
            for (Eigen::Index b = 0; b < probs.cols(); ++b) {
                int y = labels[start + static_cast<std::size_t>(b)];
                total_loss -= cache.log_probs(y, b);
                Eigen::Index pred;
                probs.col(b).maxCoeff(&pred);
                if (pred == y) ++correct;
            }
        }
        return {total_loss / static_cast<double>(sequences.size()),
                static_cast<double>(correct) / static_cast<double>(sequences.size())};
    }

    // Mean cross-entropy plus gradients of it for one mini-batch. `labels`
    // are class indices in [0, output_classes).
    struct Gradients {
        Eigen::MatrixXd embedding, fwd_w, fwd_r, bwd_w, bwd_r, dense_w, out_w;
        Eigen::VectorXd fwd_b, bwd_b, dense_b, out_b;
    };

    struct BatchResult {
        double loss = 0;
        std::size_t correct = 0;   // argmax prediction matches label
    };

    BatchResult compute_gradients(const std::vector<std::vector<int>>& batch,
                                  const std::vector<int>& labels, Gradients& grads) const {
        if (batch.size() != labels.size())
            throw ConfigError("batch and label counts differ");
        Cache cache;
        Eigen::MatrixXd probs = run_forward(batch, cache, /*keep_cache=*/true);
        const auto n = static_cast<Eigen::Index>(batch.size());

        BatchResult result;
        Eigen::MatrixXd dlogits = probs;
        for (Eigen::Index b = 0; b < n; ++b) {
            int y = labels[static_cast<std::size_t>(b)];
            if (y < 0 || y >= config_.output_classes)
                throw DataError("label " + std::to_string(y) + " out of range");
            result.loss += cache.log_probs(y, b);
            dlogits(y, b) -= 1.0;
            Eigen::Index pred;
            probs.col(b).maxCoeff(&pred);
            if (pred == y) ++result.correct;
        }
        result.loss = -result.loss / static_cast<double>(n);
        dlogits /= static_cast<double>(n);

        backward(cache, dlogits, grads);
        return result;
    }

    void apply_update(const Gradients& grads, double rate) {
        embedding_ -= rate * grads.embedding;
        fwd_w_ -= rate * grads.fwd_w;
        fwd_r_ -= rate * grads.fwd_r;
        fwd_b_ -= rate * grads.fwd_b;
        bwd_w_ -= rate * grads.bwd_w;
        bwd_r_ -= rate * grads.bwd_r;
        bwd_b_ -= rate * grads.bwd_b;
        if (config_.dense_units > 0) {
            dense_w_ -= rate * grads.dense_w;
            dense_b_ -= rate * grads.dense_b;
        }
        out_w_ -= rate * grads.out_w;
        out_b_ -= rate * grads.out_b;
    }

    Gradients zero_gradients() const {
        Gradients g;
        g.embedding.setZero(embedding_.rows(), embedding_.cols());
        g.fwd_w.setZero(fwd_w_.rows(), fwd_w_.cols());
        g.fwd_r.setZero(fwd_r_.rows(), fwd_r_.cols());
        g.fwd_b.setZero(fwd_b_.size());
        g.bwd_w.setZero(bwd_w_.rows(), bwd_w_.cols());
        g.bwd_r.setZero(bwd_r_.rows(), bwd_r_.cols());
        g.bwd_b.setZero(bwd_b_.size());
        if (config_.dense_units > 0) {
            g.dense_w.setZero(dense_w_.rows(), dense_w_.cols());
            g.dense_b.setZero(dense_b_.size());
        }
        g.out_w.setZero(out_w_.rows(), out_w_.cols());
        g.out_b.setZero(out_b_.size());
        return g;
    }

    // Named views over every parameter matrix, for serialization and for the
    // finite-difference gradient checker. Bias vectors are exposed as
    // single-column matrices via Eigen maps on the same storage.
    struct ParamView {
        std::string name;
        Eigen::MatrixXd* matrix = nullptr;
        Eigen::VectorXd* vector = nullptr;
    };

    std::vector<ParamView> parameters() {
        std::vector<ParamView> views = {
            {"embedding", &embedding_, nullptr}, {"fwd_w", &fwd_w_, nullptr},
            {"fwd_r", &fwd_r_, nullptr},         {"fwd_b", nullptr, &fwd_b_},
            {"bwd_w", &bwd_w_, nullptr},         {"bwd_r", &bwd_r_, nullptr},
            {"bwd_b", nullptr, &bwd_b_},
        };
        if (config_.dense_units > 0) {
            views.push_back({"dense_w", &dense_w_, nullptr});
            views.push_back({"dense_b", nullptr, &dense_b_});
        }
        views.push_back({"out_w", &out_w_, nullptr});
        views.push_back({"out_b", nullptr, &out_b_});
        return views;
    }

    const Eigen::MatrixXd* gradient_for(const Gradients& g, const std::string& name) const {
        if (name == "embedding") return &g.embedding;
        if (name == "fwd_w") return &g.fwd_w;
        if (name == "fwd_r") return &g.fwd_r;
        if (name == "bwd_w") return &g.bwd_w;
        if (name == "bwd_r") return &g.bwd_r;
        if (name == "dense_w") return &g.dense_w;
        if (name == "out_w") return &g.out_w;
        return nullptr;
    }

    const Eigen::VectorXd* gradient_vec_for(const Gradients& g, const std::string& name) const {
        if (name == "fwd_b") return &g.fwd_b;
        if (name == "bwd_b") return &g.bwd_b;
        if (name == "dense_b") return &g.dense_b;
        if (name == "out_b") return &g.out_b;
        return nullptr;
    }

    bool operator==(const SequenceClassifier& other) const {
        auto eq = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
            return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
        };
        return config_ == other.config_ && eq(embedding_, other.embedding_) &&
               eq(fwd_w_, other.fwd_w_) && eq(fwd_r_, other.fwd_r_) &&
               fwd_b_ == other.fwd_b_ && eq(bwd_w_, other.bwd_w_) &&
               eq(bwd_r_, other.bwd_r_) && bwd_b_ == other.bwd_b_ &&
               eq(dense_w_, other.dense_w_) && dense_b_ == other.dense_b_ &&
               eq(out_w_, other.out_w_) && out_b_ == other.out_b_;
    }

private:
    struct Direction {
        std::vector<Eigen::MatrixXd> x;       // embedded inputs per step (d x n)
        std::vector<Eigen::MatrixXd> gates;   // activated i,f,g,o stacked (4u x n)
        std::vector<Eigen::MatrixXd> c;       // cell state per step (u x n)
        std::vector<Eigen::MatrixXd> s;       // sigmoid(c) per step (u x n)
        std::vector<Eigen::MatrixXd> h;       // h[0] is the zero initial state
        std::vector<std::vector<int>> idx;    // token indices per step
    };

    struct Cache {
        Direction fwd, bwd;
        Eigen::MatrixXd features;     // 2u x n
        Eigen::MatrixXd dense_pre;    // dense_units x n (pre-activation)
        Eigen::MatrixXd dense_out;    // dense_units x n
        Eigen::MatrixXd log_probs;    // classes x n
    };

    void run_direction(const std::vector<std::vector<int>>& batch, bool reverse,
                       const Eigen::MatrixXd& w, const Eigen::MatrixXd& r,
                       const Eigen::VectorXd& bias, Direction& dir, bool keep) const {
        const int t_len = config_.sequence_length;
        const int u = config_.recurrent_units;
        const int d = config_.embedding_dim;
        const auto n = static_cast<Eigen::Index>(batch.size());

        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(u, n);
        Eigen::MatrixXd c = Eigen::MatrixXd::Zero(u, n);
        if (keep) {
            dir.x.resize(static_cast<std::size_t>(t_len));
            dir.gates.resize(static_cast<std::size_t>(t_len));
            dir.c.resize(static_cast<std::size_t>(t_len));
            dir.s.resize(static_cast<std::size_t>(t_len));
            dir.h.assign(1, h);
            dir.idx.resize(static_cast<std::size_t>(t_len));
        }

        Eigen::MatrixXd x(d, n);
        for (int step = 0; step < t_len; ++step) {
            const int t = reverse ? t_len - 1 - step : step;
            std::vector<int> ids(static_cast<std::size_t>(n));
            for (Eigen::Index b = 0; b < n; ++b) {
                int id = batch[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
                if (id < 0 || id >= config_.vocab_size)
                    throw DataError("token index " + std::to_string(id) +
                                    " out of range for vocabulary size " +
                                    std::to_string(config_.vocab_size));
                ids[static_cast<std::size_t>(b)] = id;
                x.col(b) = embedding_.row(id).transpose();
            }

            Eigen::MatrixXd z = (w * x + r * h).colwise() + bias;
            Eigen::ArrayXXd a(4 * u, n);
            a.topRows(3 * u) = detail::sigmoid(z.array().topRows(3 * u));   // i, f, o
            a.bottomRows(u) = z.array().bottomRows(u).tanh();               // candidate
            auto gi = a.topRows(u);
            auto gf = a.middleRows(u, u);
            auto go = a.middleRows(2 * u, u);
            auto gg = a.bottomRows(u);

            c = (gf * c.array() + gi * gg).matrix();
            Eigen::ArrayXXd s = c.array().tanh();
            h = (go * s).matrix();

            if (keep) {
                auto k = static_cast<std::size_t>(step);
                dir.x[k] = x;
                dir.gates[k] = a.matrix();
                dir.c[k] = c;
                dir.s[k] = s.matrix();
                dir.h.push_back(h);
                dir.idx[k] = std::move(ids);
            }
        }
        if (!keep) {
            dir.h.assign(1, h);   // only the final state is needed
        }
    }

    Eigen::MatrixXd run_forward(const std::vector<std::vector<int>>& batch, Cache& cache,
                                bool keep_cache) const {
        if (batch.empty()) throw DataError("empty batch");
        for (const auto& seq : batch)
            if (static_cast<int>(seq.size()) != config_.sequence_length)
                throw DataError("sequence length " + std::to_string(seq.size()) +
                                " does not match configured length " +
                                std::to_string(config_.sequence_length));

        run_direction(batch, false, fwd_w_, fwd_r_, fwd_b_, cache.fwd, keep_cache);
        run_direction(batch, true, bwd_w_, bwd_r_, bwd_b_, cache.bwd, keep_cache);

        const auto n = static_cast<Eigen::Index>(batch.size());
        const int u = config_.recurrent_units;
        cache.features.resize(2 * u, n);
        cache.features.topRows(u) = cache.fwd.h.back();
        cache.features.bottomRows(u) = cache.bwd.h.back();

        const Eigen::MatrixXd* to_output = &cache.features;
        if (config_.dense_units > 0) {
            cache.dense_pre = (dense_w_ * cache.features).colwise() + dense_b_;
            cache.dense_out = cache.dense_pre.cwiseMax(0.0);
            to_output = &cache.dense_out;
        }

        Eigen::MatrixXd logits = (out_w_ * (*to_output)).colwise() + out_b_;
        Eigen::RowVectorXd max = logits.colwise().maxCoeff();
        Eigen::MatrixXd shifted = logits.rowwise() - max;
        Eigen::RowVectorXd lse = shifted.array().exp().colwise().sum().log();
        cache.log_probs = shifted.rowwise() - lse;
        return cache.log_probs.array().exp();
    }

    void backward_direction(const Direction& dir, const Eigen::MatrixXd& dh_final,
                            const Eigen::MatrixXd& w, const Eigen::MatrixXd& r,
                            Eigen::MatrixXd& dw, Eigen::MatrixXd& dr, Eigen::VectorXd& db,
                            Eigen::MatrixXd& dembedding, bool reverse) const {
        const int t_len = config_.sequence_length;
        const int u = config_.recurrent_units;

        Eigen::MatrixXd dh = dh_final;
        Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(u, dh.cols());
        for (int step = t_len - 1; step >= 0; --step) {
            auto k = static_cast<std::size_t>(step);
            const Eigen::ArrayXXd a = dir.gates[k].array();
            auto gi = a.topRows(u);
            auto gf = a.middleRows(u, u);
            auto go = a.middleRows(2 * u, u);
            auto gg = a.bottomRows(u);
            const Eigen::ArrayXXd s = dir.s[k].array();
            Eigen::ArrayXXd c_prev = Eigen::ArrayXXd::Zero(u, dh.cols());
            if (step > 0) c_prev = dir.c[k - 1].array();

            Eigen::ArrayXXd do_ = dh.array() * s;
            dc.array() += dh.array() * go * (1.0 - s * s);

            Eigen::ArrayXXd di = dc.array() * gg;
            Eigen::ArrayXXd df = dc.array() * c_prev;
            Eigen::ArrayXXd dg = dc.array() * gi;

            Eigen::MatrixXd dz(4 * u, dh.cols());
            dz.topRows(u) = (di * gi * (1.0 - gi)).matrix();
            dz.middleRows(u, u) = (df * gf * (1.0 - gf)).matrix();
            dz.middleRows(2 * u, u) = (do_ * go * (1.0 - go)).matrix();
            dz.bottomRows(u) = (dg * (1.0 - gg * gg)).matrix();

            dw.noalias() += dz * dir.x[k].transpose();
            dr.noalias() += dz * dir.h[k].transpose();
            db += dz.rowwise().sum();

            Eigen::MatrixXd dx = w.transpose() * dz;
            for (Eigen::Index b = 0; b < dx.cols(); ++b)
                dembedding.row(dir.idx[k][static_cast<std::size_t>(b)]) +=
                    dx.col(b).transpose();

            dh = r.transpose() * dz;
            dc = (dc.array() * gf).matrix();
        }
        (void)reverse;
    }

    void backward(const Cache& cache, const Eigen::MatrixXd& dlogits, Gradients& grads) const {
        const int u = config_.recurrent_units;

        Eigen::MatrixXd dfeat;
        if (config_.dense_units > 0) {
            const Eigen::MatrixXd* to_output = &cache.dense_out;
            grads.out_w.noalias() += dlogits * to_output->transpose();
            grads.out_b += dlogits.rowwise().sum();
            Eigen::MatrixXd ddense = out_w_.transpose() * dlogits;
            Eigen::MatrixXd dpre =
                (ddense.array() * (cache.dense_pre.array() > 0.0).cast<double>()).matrix();
            grads.dense_w.noalias() += dpre * cache.features.transpose();
            grads.dense_b += dpre.rowwise().sum();
            dfeat = dense_w_.transpose() * dpre;
        } else {
            grads.out_w.noalias() += dlogits * cache.features.transpose();
            grads.out_b += dlogits.rowwise().sum();
            dfeat = out_w_.transpose() * dlogits;
        }

        backward_direction(cache.fwd, dfeat.topRows(u), fwd_w_, fwd_r_, grads.fwd_w,
                           grads.fwd_r, grads.fwd_b, grads.embedding, false);
        backward_direction(cache.bwd, dfeat.bottomRows(u), bwd_w_, bwd_r_, grads.bwd_w,
                           grads.bwd_r, grads.bwd_b, grads.embedding, true);
    }

    friend nlohmann::json model_to_json(const SequenceClassifier& model);
    friend SequenceClassifier model_from_json_params(const nlohmann::json& j,
                                                     const SequenceClassifierConfig& config);

    SequenceClassifierConfig config_;
    Eigen::MatrixXd embedding_;
    Eigen::MatrixXd fwd_w_, fwd_r_;
    Eigen::VectorXd fwd_b_;
    Eigen::MatrixXd bwd_w_, bwd_r_;
    Eigen::VectorXd bwd_b_;
    Eigen::MatrixXd dense_w_;
    Eigen::VectorXd dense_b_;
    Eigen::MatrixXd out_w_;
    Eigen::VectorXd out_b_;
};

// ---------------------------------------------------------------------------
// Serialization. JSON container with a format version; parameters are stored
// as flat row-major arrays. Doubles are written with shortest-round-trip
// precision so a load reproduces the saved model bitwise.

inline constexpr int kModelFormatVersion = 1;

struct TrainingMetadata {
    std::uint64_t seed = 0;
    int epochs_run = 0;
    int best_epoch = 0;   // 0 means no checkpoint fired; initial state returned
    double best_val_error = std::numeric_limits<double>::infinity();
    double best_val_accuracy = 0;
};

namespace detail {

inline nlohmann::json flatten(const Eigen::MatrixXd& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
    return arr;
}

inline void unflatten(const nlohmann::json& arr, Eigen::MatrixXd& m) {
    if (arr.size() != static_cast<std::size_t>(m.rows() * m.cols()))
        throw DataError("parameter array has " + std::to_string(arr.size()) +
                        " values, expected " + std::to_string(m.rows() * m.cols()));
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = arr[i++].get<double>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const SequenceClassifierConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"sequence_length", c.sequence_length},
            {"embedding_dim", c.embedding_dim},
            {"recurrent_units", c.recurrent_units},
            {"dense_units", c.dense_units},
            {"output_classes", c.output_classes},
            {"loss", c.loss_name()}};
}

inline SequenceClassifierConfig config_from_json(const nlohmann::json& j) {
    SequenceClassifierConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.sequence_length = j.at("sequence_length").get<int>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.recurrent_units = j.at("recurrent_units").get<int>();
    c.dense_units = j.at("dense_units").get<int>();
    c.output_classes = j.at("output_classes").get<int>();
    c.validate();
    return c;
}

inline nlohmann::json model_to_json(const SequenceClassifier& model) {
    nlohmann::json params;
    params["embedding"] = detail::flatten(model.embedding_);
    params["fwd_w"] = detail::flatten(model.fwd_w_);
    params["fwd_r"] = detail::flatten(model.fwd_r_);
    params["fwd_b"] = detail::flatten(model.fwd_b_);
    params["bwd_w"] = detail::flatten(model.bwd_w_);
    params["bwd_r"] = detail::flatten(model.bwd_r_);
    params["bwd_b"] = detail::flatten(model.bwd_b_);
    if (model.config_.dense_units > 0) {
        params["dense_w"] = detail::flatten(model.dense_w_);
        params["dense_b"] = detail::flatten(model.dense_b_);
    }
    params["out_w"] = detail::flatten(model.out_w_);
    params["out_b"] = detail::flatten(model.out_b_);
    return {{"format_version", kModelFormatVersion},
            {"kind", "sequence-classifier"},
            {"config", config_to_json(model.config_)},
            {"parameters", std::move(params)}};
}

inline SequenceClassifier model_from_json_params(const nlohmann::json& j,
                                                 const SequenceClassifierConfig& config) {
    SequenceClassifier model(config);
    const nlohmann::json& params = j.at("parameters");
    auto load = [&params](const char* name, Eigen::MatrixXd& m) {
        detail::unflatten(params.at(name), m);
    };
    auto load_vec = [&params](const char* name, Eigen::VectorXd& v) {
        Eigen::MatrixXd m(v.size(), 1);
        detail::unflatten(params.at(name), m);
        v = m.col(0);
    };
    load("embedding", model.embedding_);
    load("fwd_w", model.fwd_w_);
    load("fwd_r", model.fwd_r_);
    load_vec("fwd_b", model.fwd_b_);
    load("bwd_w", model.bwd_w_);
    load("bwd_r", model.bwd_r_);
    load_vec("bwd_b", model.bwd_b_);
    if (config.dense_units > 0) {
        load("dense_w", model.dense_w_);
        load_vec("dense_b", model.dense_b_);
    }
    load("out_w", model.out_w_);
    load_vec("out_b", model.out_b_);
    return model;
}

inline void check_format_version(const nlohmann::json& j, const std::string& what,
                                 int expected = kModelFormatVersion) {
    int version = j.value("format_version", -1);
    if (version != expected)
        throw DataError(what + " has format version " + std::to_string(version) +
                        "; this build reads version " + std::to_string(expected));
}

inline nlohmann::json metadata_to_json(const TrainingMetadata& m) {
    return {{"seed", m.seed},
            {"epochs_run", m.epochs_run},
            {"best_epoch", m.best_epoch},
            {"best_val_error", m.best_val_error},
            {"best_val_accuracy", m.best_val_accuracy}};
}

inline TrainingMetadata metadata_from_json(const nlohmann::json& j) {
    TrainingMetadata m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.epochs_run = j.at("epochs_run").get<int>();
    m.best_epoch = j.at("best_epoch").get<int>();
    m.best_val_error = j.at("best_val_error").get<double>();
    m.best_val_accuracy = j.at("best_val_accuracy").get<double>();
    return m;
}

inline void save_model(const SequenceClassifier& model, const TrainingMetadata& metadata,
                       const std::filesystem::path& path) {
    nlohmann::json j = model_to_json(model);
    j["training"] = metadata_to_json(metadata);
    write_file_atomic(path, j.dump(2) + "\n");
}

inline std::pair<SequenceClassifier, TrainingMetadata> load_model(
    const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw DataError(path.string() + ": not valid JSON");
    check_format_version(j, path.string());
    SequenceClassifierConfig config = config_from_json(j.at("config"));
    SequenceClassifier model = model_from_json_params(j, config);
    TrainingMetadata metadata;
    if (j.contains("training")) metadata = metadata_from_json(j["training"]);
    return {std::move(model), metadata};
}

// ---------------------------------------------------------------------------
// Training loop

struct NeuralDataset {
    std::vector<std::vector<int>> sequences;
    std::vector<int> labels;   // class indices in [0, output_classes)

    std::size_t size() const { return sequences.size(); }
};

struct EpochStats {
    int epoch = 0;
    double rate = 0;
    double train_loss = 0;
    double train_accuracy = 0;
    double val_error = 0;
    double val_accuracy = 0;
    bool improved = false;
    bool checkpointed = false;
};

struct TrainResult {
    SequenceClassifier model;   // the snapshot taken at best_epoch
    TrainingMetadata metadata;
    std::vector<EpochStats> history;
};

// Mini-batch gradient descent under the patience/decay schedule. Training
// accuracy is the running accuracy accumulated while fitting (predictions
// made before each update). The returned model is the last checkpoint, or
// the initial state if no epoch ever checkpointed.
inline TrainResult train(SequenceClassifier model, const NeuralDataset& train_set,
                         const NeuralDataset& val_set, const TrainingSchedule& schedule,
                         std::uint64_t seed) {
    if (train_set.size() == 0 || val_set.size() == 0)
        throw DataError("training and validation sets must be non-empty");
    if (train_set.sequences.size() != train_set.labels.size() ||
        val_set.sequences.size() != val_set.labels.size())
        throw DataError("sequence and label counts differ");

    TrainResult result;
    result.model = model;   // fallback when no checkpoint ever fires
    result.metadata.seed = seed;

    EarlyStopController controller(schedule);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    while (controller.should_continue()) {
        double rate = controller.begin_epoch();
        const int epoch = controller.epoch();

        std::mt19937_64 rng(sub_seed(seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(schedule.batch_size)) {
            std::size_t stop = std::min(order.size(),
                                        start + static_cast<std::size_t>(schedule.batch_size));
            std::vector<std::vector<int>> batch;
            std::vector<int> labels;
            batch.reserve(stop - start);
            labels.reserve(stop - start);
            for (std::size_t k = start; k < stop; ++k) {
                batch.push_back(train_set.sequences[order[k]]);
                labels.push_back(train_set.labels[order[k]]);
            }
            auto grads = model.zero_gradients();
            auto res = model.compute_gradients(batch, labels, grads);
            if (!std::isfinite(res.loss))
                throw NumericError("non-finite training loss at epoch " +
                                   std::to_string(epoch));
            loss_sum += res.loss * static_cast<double>(batch.size());
            correct += res.correct;
            model.apply_update(grads, rate);
        }
        double train_loss = loss_sum / static_cast<double>(order.size());
        double train_accuracy = static_cast<double>(correct) /
                                static_cast<double>(order.size());

        auto val = model.evaluate(val_set.sequences, val_set.labels, schedule.batch_size);
        if (!std::isfinite(val.error))
            throw NumericError("non-finite validation error at epoch " +
                               std::to_string(epoch));

        auto outcome = controller.observe(val.error, val.accuracy, train_accuracy);
        if (outcome.checkpointed) result.model = model;

        result.history.push_back({epoch, rate, train_loss, train_accuracy, val.error,
                                  val.accuracy, outcome.improved, outcome.checkpointed});
    }

    result.metadata.epochs_run = controller.epoch();
    result.metadata.best_epoch = controller.best_epoch();
    result.metadata.best_val_error = controller.best_error();
    result.metadata.best_val_accuracy = controller.best_accuracy();
    return result;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient validation

// Max relative error between `grads` and central finite differences of the
// loss over every parameter coefficient.
inline double gradient_check_against(SequenceClassifier& model,
                                     const std::vector<std::vector<int>>& batch,
                                     const std::vector<int>& labels,
                                     const SequenceClassifier::Gradients& grads,
                                     double step = 1e-5) {
    double worst = 0;
    for (auto& view : model.parameters()) {
        auto probe = [&](double* coeff, double analytic) {
            double saved = *coeff;
            *coeff = saved + step;
            double plus = model.loss(batch, labels);
            *coeff = saved - step;
            double minus = model.loss(batch, labels);
            *coeff = saved;
            double fd = (plus - minus) / (2.0 * step);
            // the 1e-6 floor keeps round-off noise on numerically-zero
            // gradients from dominating the ratio
            double rel = std::abs(analytic - fd) /
                         std::max(1e-6, std::abs(analytic) + std::abs(fd));
            worst = std::max(worst, rel);
        };
        if (view.matrix) {
            const Eigen::MatrixXd* g = model.gradient_for(grads, view.name);
            for (Eigen::Index r = 0; r < view.matrix->rows(); ++r)
                for (Eigen::Index c = 0; c < view.matrix->cols(); ++c)
                    probe(&(*view.matrix)(r, c), (*g)(r, c));
        } else {
            const Eigen::VectorXd* g = model.gradient_vec_for(grads, view.name);
            for (Eigen::Index r = 0; r < view.vector->size(); ++r)
                probe(&(*view.vector)(r), (*g)(r));
        }
    }
    return worst;
}

inline double gradient_check(SequenceClassifier& model,
                             const std::vector<std::vector<int>>& batch,
                             const std::vector<int>& labels, double step = 1e-5) {
    auto grads = model.zero_gradients();
    model.compute_gradients(batch, labels, grads);
    return gradient_check_against(model, batch, labels, grads, step);
}

}  // namespace hsd
