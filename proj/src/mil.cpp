#include "scanshift/mil.hpp"

#include "scanshift/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace scanshift::mil {

namespace {

using json = nlohmann::json;

constexpr std::array<const char*, Model::kTensorCount> kTensorNames = {
    "proj_w", "proj_b", "attn_v", "attn_u", "attn_w", "cls_w", "cls_b"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
    const double top = x.maxCoeff();
    Eigen::VectorXd e = (x.array() - top).exp().matrix();
    return e / e.sum();
}

double log_sum_exp(const Eigen::VectorXd& x) {
    const double top = x.maxCoeff();
    return top + std::log((x.array() - top).exp().sum());
}

// Intermediate activations of one forward pass, reused by the backward pass.
struct Trace {
    RowMatrix pre;        // K x P, projection pre-activation
    RowMatrix m;          // K x P, projected tiles after relu and dropout
    RowMatrix a_tanh;     // K x A
    RowMatrix a_gate;     // K x A
    Eigen::VectorXd attention;
    Eigen::VectorXd slide;  // z after dropout
    Eigen::VectorXd logits;
};

void check_shapes(const RowMatrix& bag, const Model& model, const DropoutMask& mask) {
    if (bag.rows() == 0) throw Error(ErrorKind::EmptyBag, "MIL bag has no tiles");
    if (bag.cols() != model.proj_w.cols()) {
        throw Error(ErrorKind::ShapeMismatch,
                    fmt::format("bag has d={}, model expects d={}", bag.cols(), model.proj_w.cols()));
    }
    const auto p = model.proj_w.rows();
    if (model.proj_b.size() != p || model.attn_v.cols() != p || model.attn_u.cols() != p ||
        model.attn_u.rows() != model.attn_v.rows() || model.attn_w.size() != model.attn_v.rows() ||
        model.cls_w.cols() != p || model.cls_b.size() != model.cls_w.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "inconsistent MIL model shapes");
    }
    if (!mask.empty() && (mask.tiles.rows() != bag.rows() || mask.tiles.cols() != p ||
                          mask.slide.size() != p)) {
        throw Error(ErrorKind::ShapeMismatch, "dropout mask does not match bag/model shapes");
    }
}

Trace run_forward(const RowMatrix& bag, const Model& model, const DropoutMask& mask) {
    check_shapes(bag, model, mask);
    Trace t;
    t.pre = bag * model.proj_w.transpose();
    t.pre.rowwise() += model.proj_b.transpose();
    t.m = t.pre.cwiseMax(0.0);
    if (!mask.empty()) t.m = t.m.cwiseProduct(mask.tiles);

    t.a_tanh = (t.m * model.attn_v.transpose()).array().tanh().matrix();
    t.a_gate = (t.m * model.attn_u.transpose()).unaryExpr([](double x) { return sigmoid(x); });
    const Eigen::VectorXd scores = t.a_tanh.cwiseProduct(t.a_gate) * model.attn_w;
    t.attention = softmax(scores);

    t.slide = t.m.transpose() * t.attention;
    if (!mask.empty()) t.slide = t.slide.cwiseProduct(mask.slide);
    t.logits = model.cls_w * t.slide + model.cls_b;
    if (!t.logits.allFinite() || !t.attention.allFinite()) {
        throw Error(ErrorKind::NonFiniteActivation, "non-finite activation in MIL forward pass");
    }
    return t;
}

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

}  // namespace

void Hyperparams::validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorKind::BadHyperparams, what); };
    if (input_dim == 0 || proj_dim == 0 || attn_dim == 0) bad("dimensions must be positive");
    if (n_classes < 2) bad("need at least two classes");
    if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
    if (!(learning_rate > 0.0 && learning_rate < 1.0)) bad("learning rate must lie in (0, 1)");
    if (!(weight_decay >= 0.0 && weight_decay < 1.0)) bad("weight decay must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad("betas must lie in [0, 1)");
    if (!(eps > 0.0)) bad("eps must be positive");
    if (max_epochs < 1) bad("max_epochs must be >= 1");
    if (patience < 0) bad("patience must be >= 0");
}

Model Model::zeros(const Hyperparams& hp) {
    const auto d = static_cast<Eigen::Index>(hp.input_dim);
    const auto p = static_cast<Eigen::Index>(hp.proj_dim);
    const auto a = static_cast<Eigen::Index>(hp.attn_dim);
    const auto c = static_cast<Eigen::Index>(hp.n_classes);
    return Model{Eigen::MatrixXd::Zero(p, d), Eigen::VectorXd::Zero(p),
                 Eigen::MatrixXd::Zero(a, p), Eigen::MatrixXd::Zero(a, p),
                 Eigen::VectorXd::Zero(a), Eigen::MatrixXd::Zero(c, p),
                 Eigen::VectorXd::Zero(c)};
}

Model Model::xavier(const Hyperparams& hp, std::mt19937_64& rng) {
    Model model = zeros(hp);
    auto fill = [&](Eigen::Ref<Eigen::MatrixXd> w, double fan_in, double fan_out) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (fan_in + fan_out)));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
        }
    };
    const auto d = static_cast<double>(hp.input_dim);
    const auto p = static_cast<double>(hp.proj_dim);
    const auto a = static_cast<double>(hp.attn_dim);
    const auto c = static_cast<double>(hp.n_classes);
    fill(model.proj_w, d, p);
    fill(model.attn_v, p, a);
    fill(model.attn_u, p, a);
    fill(model.attn_w, a, 1.0);
    fill(model.cls_w, p, c);
    return model;
}

std::array<std::span<double>, Model::kTensorCount> Model::tensors() {
    auto span = [](auto& t) { return std::span<double>(t.data(), static_cast<std::size_t>(t.size())); };
    return {span(proj_w), span(proj_b), span(attn_v), span(attn_u),
            span(attn_w), span(cls_w), span(cls_b)};
}

std::array<std::span<const double>, Model::kTensorCount> Model::tensors() const {
    auto span = [](const auto& t) {
        return std::span<const double>(t.data(), static_cast<std::size_t>(t.size()));
    };
    return {span(proj_w), span(proj_b), span(attn_v), span(attn_u),
            span(attn_w), span(cls_w), span(cls_b)};
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto t : tensors()) n += t.size();
    return n;
}

bool Model::same_shape(const Model& o) const {
    return proj_w.rows() == o.proj_w.rows() && proj_w.cols() == o.proj_w.cols() &&
           proj_b.size() == o.proj_b.size() && attn_v.rows() == o.attn_v.rows() &&
           attn_v.cols() == o.attn_v.cols() && attn_u.rows() == o.attn_u.rows() &&
           attn_u.cols() == o.attn_u.cols() && attn_w.size() == o.attn_w.size() &&
           cls_w.rows() == o.cls_w.rows() && cls_w.cols() == o.cls_w.cols() &&
           cls_b.size() == o.cls_b.size();
}

bool Model::all_finite() const {
    for (const auto t : tensors()) {
        if (!Eigen::Map<const Eigen::ArrayXd>(t.data(), static_cast<Eigen::Index>(t.size())).allFinite()) {
            return false;
        }
    }
    return true;
}

bool operator==(const Model& a, const Model& b) {
    if (!a.same_shape(b)) return false;
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (!std::equal(ta[i].begin(), ta[i].end(), tb[i].begin())) return false;
    }
    return true;
}

DropoutMask DropoutMask::sample(std::size_t tile_count, std::size_t proj_dim, double rate,
                                std::mt19937_64& rng) {
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    DropoutMask mask;
    mask.tiles.resize(static_cast<Eigen::Index>(tile_count), static_cast<Eigen::Index>(proj_dim));
    mask.slide.resize(static_cast<Eigen::Index>(proj_dim));
    for (Eigen::Index i = 0; i < mask.tiles.size(); ++i) mask.tiles.data()[i] = keep(rng) ? scale : 0.0;
    for (Eigen::Index i = 0; i < mask.slide.size(); ++i) mask.slide[i] = keep(rng) ? scale : 0.0;
    return mask;
}

Forward forward(const RowMatrix& bag, const Model& model, const DropoutMask& mask) {
    Trace t = run_forward(bag, model, mask);
    return {std::move(t.logits), std::move(t.attention)};
}

LossGrad loss_grad(const RowMatrix& bag, std::size_t label, const Model& model,
                   const DropoutMask& mask) {
    LossGrad out;
    loss_grad_into(bag, label, model, mask, out);
    return out;
}

void loss_grad_into(const RowMatrix& bag, std::size_t label, const Model& model,
                    const DropoutMask& mask, LossGrad& out) {
    const Trace t = run_forward(bag, model, mask);
    const auto n_classes = static_cast<std::size_t>(model.cls_b.size());
    if (label >= n_classes) {
        throw Error(ErrorKind::ShapeMismatch,
                    fmt::format("label {} out of range for {} classes", label, n_classes));
    }
    const auto y = static_cast<Eigen::Index>(label);
    out.loss = log_sum_exp(t.logits) - t.logits[y];

    Model& g = out.grads;
    Eigen::VectorXd dlogits = softmax(t.logits);
    dlogits[y] -= 1.0;
    g.cls_w = dlogits * t.slide.transpose();
    g.cls_b = dlogits;

    Eigen::VectorXd dz = model.cls_w.transpose() * dlogits;
    if (!mask.empty()) dz = dz.cwiseProduct(mask.slide);

    // Attention pooling z = M^T a.
    RowMatrix dm = t.attention * dz.transpose();
    const Eigen::VectorXd da = t.m * dz;
    const double mean_da = t.attention.dot(da);
    const Eigen::VectorXd dscore = t.attention.cwiseProduct((da.array() - mean_da).matrix());

    // Gated scores s = (tanh(V m) * sigmoid(U m)) w.
    const RowMatrix gated = t.a_tanh.cwiseProduct(t.a_gate);
    g.attn_w = gated.transpose() * dscore;
    const RowMatrix dgated = dscore * model.attn_w.transpose();
    const RowMatrix dpre_v = dgated.array() * t.a_gate.array() * (1.0 - t.a_tanh.array().square());
    const RowMatrix dpre_u =
        dgated.array() * t.a_tanh.array() * t.a_gate.array() * (1.0 - t.a_gate.array());
    g.attn_v.noalias() = dpre_v.transpose() * t.m;
    g.attn_u.noalias() = dpre_u.transpose() * t.m;
    dm.noalias() += dpre_v * model.attn_v;
    dm.noalias() += dpre_u * model.attn_u;

    // Projection m = dropout(relu(W x + b)).
    if (!mask.empty()) dm = dm.cwiseProduct(mask.tiles);
    const RowMatrix dpre = (t.pre.array() > 0.0).select(dm.array(), 0.0).matrix();
    g.proj_w.noalias() = dpre.transpose() * bag;
    g.proj_b = dpre.colwise().sum().transpose();

    // The large gradients are outer products of these factors, so checking the
    // factors is enough short of overflow.
    if (!std::isfinite(out.loss) || !dlogits.allFinite() || !dscore.allFinite() ||
        !dpre_v.allFinite() || !dpre_u.allFinite() || !dpre.allFinite()) {
        throw Error(ErrorKind::NonFiniteActivation, "non-finite loss or gradient in MIL backward pass");
    }
}

Eigen::VectorXd predict(const RowMatrix& bag, const Model& model) {
    return softmax(run_forward(bag, model, {}).logits);
}

AdamState AdamState::zeros(const Hyperparams& hp) {
    return AdamState{Model::zeros(hp), Model::zeros(hp), 0};
}

void adamw_step(Model& model, const Model& grads, AdamState& state, const Hyperparams& hp) {
    if (!model.same_shape(grads) || !model.same_shape(state.m) || !model.same_shape(state.v)) {
        throw Error(ErrorKind::ShapeMismatch, "AdamW state does not match model shapes");
    }
    const std::int64_t step = state.step + 1;
    const double bias1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
    const double step_size = hp.learning_rate / bias1;
    const double bias2_sqrt = std::sqrt(bias2);
    const double decay = 1.0 - hp.learning_rate * hp.weight_decay;

    auto params = model.tensors();
    const auto gs = grads.tensors();
    auto ms = state.m.tensors();
    auto vs = state.v.tensors();
    for (std::size_t t = 0; t < params.size(); ++t) {
        double* p = params[t].data();
        double* m = ms[t].data();
        double* v = vs[t].data();
        const double* g = gs[t].data();
        const std::size_t n = params[t].size();
        // One fused pass. `probe` turns NaN as soon as any updated value is not finite.
        double probe = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            m[i] = mi;
            v[i] = vi;
            p[i] = p[i] * decay - step_size * mi / (std::sqrt(vi) / bias2_sqrt + hp.eps);
            probe += p[i] * 0.0;
        }
        if (probe != 0.0) {
            throw Error(ErrorKind::NonFiniteUpdate,
                        fmt::format("AdamW produced a non-finite value in {}", kTensorNames[t]));
        }
    }
    state.step = step;
}

std::vector<Split> stratified_splits(std::span<const int> labels, double train_ratio,
                                     std::size_t n_splits, std::uint64_t seed_base) {
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
        throw Error(ErrorKind::BadHyperparams, "train ratio must lie in (0, 1)");
    }
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw Error(ErrorKind::MissingLabels, "negative class label");
        const auto c = static_cast<std::size_t>(labels[i]);
        if (members.size() <= c) members.resize(c + 1);
        members[c].push_back(i);
    }
    for (std::size_t c = 0; c < members.size(); ++c) {
        if (members[c].size() < 2) {
            throw Error(ErrorKind::ClassTooSmall,
                        fmt::format("class {} has {} member(s); stratified splitting needs >= 2", c,
                                    members[c].size()));
        }
    }
    std::vector<Split> splits;
    splits.reserve(n_splits);
    for (std::size_t k = 0; k < n_splits; ++k) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed_base),
                          static_cast<std::uint32_t>(seed_base >> 32), static_cast<std::uint32_t>(k)};
        std::mt19937_64 rng(seq);
        Split split;
        for (auto ids : members) {
            std::shuffle(ids.begin(), ids.end(), rng);
            const auto n = static_cast<double>(ids.size());
            const auto n_train = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::llround(train_ratio * n)), 1, ids.size() - 1);
            split.train.insert(split.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
            split.val.insert(split.val.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
        }
        std::sort(split.train.begin(), split.train.end());
        std::sort(split.val.begin(), split.val.end());
        splits.push_back(std::move(split));
    }
    return splits;
}

double mean_loss(std::span<const RowMatrix> bags, std::span<const int> labels,
                 std::span<const std::size_t> ids, const Model& model) {
    double sum = 0.0;
    for (const auto i : ids) {
        const Eigen::VectorXd logits = run_forward(bags[i], model, {}).logits;
        sum += log_sum_exp(logits) - logits[labels[i]];
    }
    return sum / static_cast<double>(ids.size());
}

TrainRun train(std::span<const RowMatrix> bags, std::span<const int> labels, const Split& split,
               const Hyperparams& hp, std::uint64_t seed, std::size_t split_id) {
    hp.validate();
    if (bags.size() != labels.size()) {
        throw Error(ErrorKind::ShapeMismatch, "bags and labels differ in length");
    }
    auto classes_in = [&](const std::vector<std::size_t>& ids) {
        std::vector<bool> seen(hp.n_classes, false);
        for (const auto i : ids) {
            if (i >= bags.size()) throw Error(ErrorKind::DegenerateSplit, "split index out of range");
            const int y = labels[i];
            if (y < 0 || static_cast<std::size_t>(y) >= hp.n_classes) {
                throw Error(ErrorKind::DegenerateSplit, fmt::format("label {} out of range", y));
            }
            seen[static_cast<std::size_t>(y)] = true;
        }
        return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
    };
    if (!classes_in(split.train) || !classes_in(split.val)) {
        throw Error(ErrorKind::DegenerateSplit,
                    "every class needs at least one training and one validation example");
    }

    std::mt19937_64 rng(seed);
    TrainRun run;
    run.seed = seed;
    run.split_id = split_id;
    Model model = Model::xavier(hp, rng);
    AdamState state = AdamState::zeros(hp);

    std::vector<std::size_t> order = split.train;
    std::sort(order.begin(), order.end());
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    LossGrad lg;  // reused so the gradient buffers are allocated once
    for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (const auto i : order) {
            DropoutMask mask;
            if (hp.dropout > 0.0) {
                mask = DropoutMask::sample(static_cast<std::size_t>(bags[i].rows()), hp.proj_dim,
                                           hp.dropout, rng);
            }
            try {
                loss_grad_into(bags[i], static_cast<std::size_t>(labels[i]), model, mask, lg);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::NonFiniteActivation) throw;
                throw Error(ErrorKind::NonFiniteLoss,
                            fmt::format("epoch {}, bag {}: {}", epoch, i, e.what()));
            }
            total += lg.loss;
            adamw_step(model, lg.grads, state, hp);
        }
        run.train_losses.push_back(total / static_cast<double>(order.size()));
        const double val = mean_loss(bags, labels, split.val, model);
        if (!std::isfinite(val)) {
            throw Error(ErrorKind::NonFiniteLoss, fmt::format("epoch {}: validation loss is {}", epoch, val));
        }
        run.val_losses.push_back(val);
        if (val < best) {
            best = val;
            run.best_epoch = static_cast<std::size_t>(epoch);
            run.model = model;
            stale = 0;
        } else if (++stale >= hp.patience) {
            break;
        }
    }
    return run;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const Hyperparams& hp,
                     std::uint64_t seed) {
    json tensors = json::array();
    const auto ts = model.tensors();
    auto shape = [](const auto& t) { return json::array({t.rows(), t.cols()}); };
    const std::array<json, Model::kTensorCount> shapes = {
        shape(model.proj_w), shape(model.proj_b), shape(model.attn_v), shape(model.attn_u),
        shape(model.attn_w), shape(model.cls_w),  shape(model.cls_b)};
    for (std::size_t i = 0; i < ts.size(); ++i) {
        tensors.push_back({{"name", kTensorNames[i]}, {"shape", shapes[i]}});
    }
    const json header = {
        {"format", "MIL1"},
        {"seed", seed},
        {"hyperparams",
         {{"input_dim", hp.input_dim}, {"proj_dim", hp.proj_dim}, {"attn_dim", hp.attn_dim},
          {"n_classes", hp.n_classes}, {"dropout", hp.dropout}, {"learning_rate", hp.learning_rate},
          {"weight_decay", hp.weight_decay}, {"max_epochs", hp.max_epochs},
          {"patience", hp.patience}, {"beta1", hp.beta1}, {"beta2", hp.beta2}, {"eps", hp.eps}}},
        {"tensors", tensors}};
    const std::string text = header.dump();
    std::string out = "MIL1";
    put_u32_le(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    for (const auto t : ts) {
        for (const double x : t) {
            const auto bits = std::bit_cast<std::uint64_t>(x);
            for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path.string()));
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, fmt::format("cannot open {}", path.string()));
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& why) {
        throw Error(ErrorKind::BadCheckpoint, fmt::format("{}: {}", path.string(), why));
    };
    if (bytes.size() < 8 || bytes.compare(0, 4, "MIL1") != 0) fail("bad magic");
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t len = raw[4] | (raw[5] << 8) | (raw[6] << 16) | (std::uint32_t{raw[7]} << 24);
    if (bytes.size() < 8 + std::size_t{len}) fail("truncated header");
    Checkpoint ck;
    try {
        const json h = json::parse(bytes.substr(8, len));
        const json& hp = h.at("hyperparams");
        ck.seed = h.at("seed").get<std::uint64_t>();
        ck.hp.input_dim = hp.at("input_dim").get<std::size_t>();
        ck.hp.proj_dim = hp.at("proj_dim").get<std::size_t>();
        ck.hp.attn_dim = hp.at("attn_dim").get<std::size_t>();
        ck.hp.n_classes = hp.at("n_classes").get<std::size_t>();
        ck.hp.dropout = hp.at("dropout").get<double>();
        ck.hp.learning_rate = hp.at("learning_rate").get<double>();
        ck.hp.weight_decay = hp.at("weight_decay").get<double>();
        ck.hp.max_epochs = hp.at("max_epochs").get<int>();
        ck.hp.patience = hp.at("patience").get<int>();
        ck.hp.beta1 = hp.at("beta1").get<double>();
        ck.hp.beta2 = hp.at("beta2").get<double>();
        ck.hp.eps = hp.at("eps").get<double>();
    } catch (const json::exception& e) {
        fail(e.what());
    }
    ck.model = Model::zeros(ck.hp);
    std::size_t offset = 8 + len;
    if (bytes.size() != offset + 8 * ck.model.parameter_count()) fail("parameter blob size mismatch");
    for (auto t : ck.model.tensors()) {
        for (double& x : t) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= std::uint64_t{raw[offset + b]} << (8 * b);
            x = std::bit_cast<double>(bits);
            offset += 8;
        }
    }
    return ck;
}

}  // namespace scanshift::mil
