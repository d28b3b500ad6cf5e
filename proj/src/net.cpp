#include "knolling/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace knolling {

namespace {

constexpr double kPosScale = kWorkspaceSide;  // normalized position unit
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

void glorot_init(ad::Tensor& t, Rng& rng) {
    double a = std::sqrt(6.0 / (t.value.rows() + t.value.cols()));
    for (Eigen::Index c = 0; c < t.value.cols(); ++c)
        for (Eigen::Index r = 0; r < t.value.rows(); ++r) t.value(r, c) = rng.uniform(-a, a);
}

void lift_pair_into(ad::Mat& m, Eigen::Index row, Eigen::Index col0, double a, double b) {
    const double vals[2] = {a, b};
    auto lifted = sinusoidal_lift(std::span<const double>(vals, 2));
    for (size_t i = 0; i < lifted.size(); ++i)
        m(row, col0 + static_cast<Eigen::Index>(i)) = lifted[i];
}

ad::Mat index_matrix(int batch, int n, int d_model) {
    ad::Mat idx(static_cast<Eigen::Index>(batch) * n, d_model);
    for (int j = 0; j < n; ++j) {
        auto row = index_encoding(j, d_model);
        for (int c = 0; c < d_model; ++c) idx(j, c) = row[c];
    }
    for (int b = 1; b < batch; ++b) idx.middleRows(static_cast<Eigen::Index>(b) * n, n) = idx.topRows(n);
    return idx;
}

ad::Mat causal_mask(int n) {
    ad::Mat m = ad::Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m(i, j) = kNegInf;
    return m;
}

// binary IO, little-endian hosts assumed (x86/arm64)
template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

constexpr char kMagic[8] = {'K', 'N', 'O', 'L', 'M', 'D', '0', '1'};

}  // namespace

GmmParams raw_to_gmm(const Eigen::RowVectorXd& raw, int num_mixtures, double scale) {
    const int k = num_mixtures;
    GmmParams p;
    p.means.resize(k);
    p.stds.resize(k);
    p.weights.resize(k);
    double mx = raw.head(k).maxCoeff();
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        p.weights[i] = std::exp(raw(i) - mx);
        sum += p.weights[i];
    }
    for (int i = 0; i < k; ++i) p.weights[i] /= sum;
    auto softplus = [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
    };
    for (int i = 0; i < k; ++i) {
        p.means[i] = {raw(k + i) * scale, raw(2 * k + i) * scale};
        p.stds[i] = {(softplus(raw(3 * k + i)) + 1e-6) * scale,
                     (softplus(raw(4 * k + i)) + 1e-6) * scale};
    }
    return p;
}

Vec2 gmm_sample(const GmmParams& params, double temperature, Rng& rng) {
    const size_t k = params.weights.size();
    if (k == 0) throw std::invalid_argument("gmm_sample: empty mixture");
    if (temperature <= 0.0) {
        size_t best = 0;
        for (size_t i = 1; i < k; ++i)
            if (params.weights[i] > params.weights[best]) best = i;
        return params.means[best];
    }
    // sharpen weights as w^(1/T), stably in log space
    std::vector<double> logits(k);
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < k; ++i) {
        logits[i] = params.weights[i] > 0 ? std::log(params.weights[i]) / temperature : kNegInf;
        mx = std::max(mx, logits[i]);
    }
    double sum = 0.0;
    for (size_t i = 0; i < k; ++i) {
        logits[i] = std::exp(logits[i] - mx);
        sum += logits[i];
    }
    double u = rng.uniform() * sum;
    size_t pick = k - 1;
    double acc = 0.0;
    for (size_t i = 0; i < k; ++i) {
        acc += logits[i];
        if (u < acc) {
            pick = i;
            break;
        }
    }
    double zx = rng.normal();
    double zy = rng.normal();
    return {params.means[pick].x + temperature * params.stds[pick].x * zx,
            params.means[pick].y + temperature * params.stds[pick].y * zy};
}

Vec2 gmm_sample(const GmmParams& params, const SamplerConfig& cfg) {
    Rng rng(cfg.seed);
    return gmm_sample(params, cfg.temperature, rng);
}

LossOut gmm_nll_rows(ad::Graph& g, ad::Var raw, const ad::Mat& target_x,
                     const ad::Mat& target_y, ad::Mat row_mask, int num_mixtures) {
    const int k = num_mixtures;
    ad::Var wl = g.slice_cols(raw, 0, k);
    ad::Var logw = g.sub(wl, g.rep_cols(g.lse_cols(wl), k));
    ad::Var mux = g.slice_cols(raw, k, k);
    ad::Var muy = g.slice_cols(raw, 2 * k, k);
    ad::Var sx = g.add_scalar(g.softplus(g.slice_cols(raw, 3 * k, k)), 1e-6);
    ad::Var sy = g.add_scalar(g.softplus(g.slice_cols(raw, 4 * k, k)), 1e-6);
    ad::Var tx = g.constant(target_x.replicate(1, k));
    ad::Var ty = g.constant(target_y.replicate(1, k));
    ad::Var zx = g.square(g.cdiv(g.sub(tx, mux), sx));
    ad::Var zy = g.square(g.cdiv(g.sub(ty, muy), sy));
    ad::Var quad = g.scale(g.add(zx, zy), -0.5);
    ad::Var comp = g.add_scalar(
        g.sub(g.sub(g.add(logw, quad), g.log_elem(sx)), g.log_elem(sy)), -kLog2Pi);
    ad::Var nll = g.scale(g.lse_cols(comp), -1.0);
    double scored = row_mask.sum();
    return {g.sum_rows_weighted(nll, std::move(row_mask)), scored};
}

std::vector<Vec2> ModelBase::predict_layout(const std::vector<ObjectSpec>& objects,
                                            const SamplerConfig& sampler) const {
    auto out = predict_batch({objects}, sampler.temperature, sampler.seed);
    return out[0];
}

// --------------------------------------------------------------------------
// transformer

KnollingTransformer::KnollingTransformer(ModelConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    if (cfg_.d_model % cfg_.num_heads != 0)
        throw std::invalid_argument("d_model must be divisible by num_heads");
    const int d = cfg_.d_model;
    const int lift = lift_dim(2);
    const int out = 5 * cfg_.num_mixtures;
    auto& P = params_;
    enc_in_w_ = &P.add("enc_in.w", lift, d);
    enc_in_b_ = &P.add("enc_in.b", 1, d);
    pos_in_w_ = &P.add("pos_in.w", lift, d);
    pos_in_b_ = &P.add("pos_in.b", 1, d);
    mask_token_ = &P.add("mask_token", 1, d);
    dec_in_w_ = &P.add("dec_in.w", lift + d, d);
    dec_in_b_ = &P.add("dec_in.b", 1, d);
    auto add_attn = [&](const std::string& prefix) {
        AttnParams a;
        a.wq = &P.add(prefix + ".wq", d, d);
        a.bq = &P.add(prefix + ".bq", 1, d);
        a.wk = &P.add(prefix + ".wk", d, d);
        a.bk = &P.add(prefix + ".bk", 1, d);
        a.wv = &P.add(prefix + ".wv", d, d);
        a.bv = &P.add(prefix + ".bv", 1, d);
        a.wo = &P.add(prefix + ".wo", d, d);
        a.bo = &P.add(prefix + ".bo", 1, d);
        return a;
    };
    for (int l = 0; l < cfg_.num_encoder_layers; ++l) {
        std::string p = "enc" + std::to_string(l);
        EncLayer layer;
        layer.ln1_g = &P.add(p + ".ln1.g", 1, d);
        layer.ln1_b = &P.add(p + ".ln1.b", 1, d);
        layer.attn = add_attn(p + ".attn");
        layer.ln2_g = &P.add(p + ".ln2.g", 1, d);
        layer.ln2_b = &P.add(p + ".ln2.b", 1, d);
        layer.ff1_w = &P.add(p + ".ff1.w", d, cfg_.feedforward_dim);
        layer.ff1_b = &P.add(p + ".ff1.b", 1, cfg_.feedforward_dim);
        layer.ff2_w = &P.add(p + ".ff2.w", cfg_.feedforward_dim, d);
        layer.ff2_b = &P.add(p + ".ff2.b", 1, d);
        enc_layers_.push_back(layer);
    }
    for (int l = 0; l < cfg_.num_decoder_layers; ++l) {
        std::string p = "dec" + std::to_string(l);
        DecLayer layer;
        layer.ln1_g = &P.add(p + ".ln1.g", 1, d);
        layer.ln1_b = &P.add(p + ".ln1.b", 1, d);
        layer.self_attn = add_attn(p + ".self");
        layer.ln2_g = &P.add(p + ".ln2.g", 1, d);
        layer.ln2_b = &P.add(p + ".ln2.b", 1, d);
        layer.cross_attn = add_attn(p + ".cross");
        layer.ln3_g = &P.add(p + ".ln3.g", 1, d);
        layer.ln3_b = &P.add(p + ".ln3.b", 1, d);
        layer.ff1_w = &P.add(p + ".ff1.w", d, cfg_.feedforward_dim);
        layer.ff1_b = &P.add(p + ".ff1.b", 1, cfg_.feedforward_dim);
        layer.ff2_w = &P.add(p + ".ff2.w", cfg_.feedforward_dim, d);
        layer.ff2_b = &P.add(p + ".ff2.b", 1, d);
        dec_layers_.push_back(layer);
    }
    enc_ln_g_ = &P.add("enc_ln.g", 1, d);
    enc_ln_b_ = &P.add("enc_ln.b", 1, d);
    dec_ln_g_ = &P.add("dec_ln.g", 1, d);
    dec_ln_b_ = &P.add("dec_ln.b", 1, d);
    head_w_ = &P.add("head.w", d, out);
    head_b_ = &P.add("head.b", 1, out);

    Rng rng(init_seed);
    for (size_t i = 0; i < P.size(); ++i) {
        ad::Tensor& t = P.at(i);
        if (t.name.find(".g") != std::string::npos && t.value.rows() == 1 &&
            t.name.find("ln") != std::string::npos) {
            t.value.setOnes();
        } else if (t.value.rows() == 1 && t.name != "mask_token") {
            t.value.setZero();  // biases
        } else {
            glorot_init(t, rng);
        }
    }
}

std::vector<int32_t> KnollingTransformer::config_ints() const {
    return {cfg_.d_model,        cfg_.num_heads,    cfg_.num_encoder_layers,
            cfg_.num_decoder_layers, cfg_.feedforward_dim, cfg_.num_mixtures,
            cfg_.max_objects};
}

namespace {
// Look up tensors' registry ids once per model instead of per graph.
int registry_id(const ad::ParamRegistry& reg, const ad::Tensor* t) {
    for (size_t i = 0; i < reg.size(); ++i)
        if (&reg.at(i) == t) return static_cast<int>(i);
    throw std::logic_error("unregistered tensor");
}
}  // namespace

ad::Var KnollingTransformer::encode_graph(ad::Graph& g, const ad::Mat& lift, int batch,
                                          int n, const ad::Mat* key_mask) const {
    auto& P = params_;
    auto prm = [&](ad::Tensor* t) { return g.param(&t->value, registry_id(P, t)); };
    auto aff = [&](ad::Var x, ad::Tensor* w, ad::Tensor* b) {
        return g.add_rowvec(g.matmul(x, prm(w)), prm(b));
    };
    ad::Var x = aff(g.constant(lift), enc_in_w_, enc_in_b_);
    x = g.add(x, g.constant(index_matrix(batch, n, cfg_.d_model)));
    for (auto& layer : enc_layers_) {
        ad::Var h = g.layer_norm(x, prm(layer.ln1_g), prm(layer.ln1_b));
        ad::Var q = aff(h, layer.attn.wq, layer.attn.bq);
        ad::Var k = aff(h, layer.attn.wk, layer.attn.bk);
        ad::Var v = aff(h, layer.attn.wv, layer.attn.bv);
        ad::Var a = g.attention(q, k, v, batch, cfg_.num_heads, key_mask);
        x = g.add(x, aff(a, layer.attn.wo, layer.attn.bo));
        ad::Var h2 = g.layer_norm(x, prm(layer.ln2_g), prm(layer.ln2_b));
        x = g.add(x, aff(g.gelu(aff(h2, layer.ff1_w, layer.ff1_b)), layer.ff2_w,
                         layer.ff2_b));
    }
    return g.layer_norm(x, prm(enc_ln_g_), prm(enc_ln_b_));
}

ad::Var KnollingTransformer::decode_graph(ad::Graph& g, ad::Var memory,
                                          const ad::Mat& size_lift, const ad::Mat& pos_lift,
                                          const std::vector<int>& pos_src, int batch, int n,
                                          int n_mem, const ad::Mat* cross_mask) const {
    auto& P = params_;
    auto prm = [&](ad::Tensor* t) { return g.param(&t->value, registry_id(P, t)); };
    auto aff = [&](ad::Var x, ad::Tensor* w, ad::Tensor* b) {
        return g.add_rowvec(g.matmul(x, prm(w)), prm(b));
    };
    ad::Var pos_emb = aff(g.constant(pos_lift), pos_in_w_, pos_in_b_);
    ad::Var pos_part = g.compose_rows(pos_emb, prm(mask_token_), pos_src);
    ad::Var tok = aff(g.concat_cols(g.constant(size_lift), pos_part), dec_in_w_, dec_in_b_);
    ad::Var x = g.add(tok, g.constant(index_matrix(batch, n, cfg_.d_model)));
    const ad::Mat causal = causal_mask(n);
    for (auto& layer : dec_layers_) {
        ad::Var h = g.layer_norm(x, prm(layer.ln1_g), prm(layer.ln1_b));
        ad::Var q = aff(h, layer.self_attn.wq, layer.self_attn.bq);
        ad::Var k = aff(h, layer.self_attn.wk, layer.self_attn.bk);
        ad::Var v = aff(h, layer.self_attn.wv, layer.self_attn.bv);
        ad::Var a = g.attention(q, k, v, batch, cfg_.num_heads, &causal);
        x = g.add(x, aff(a, layer.self_attn.wo, layer.self_attn.bo));
        ad::Var h2 = g.layer_norm(x, prm(layer.ln2_g), prm(layer.ln2_b));
        ad::Var q2 = aff(h2, layer.cross_attn.wq, layer.cross_attn.bq);
        ad::Var k2 = aff(memory, layer.cross_attn.wk, layer.cross_attn.bk);
        ad::Var v2 = aff(memory, layer.cross_attn.wv, layer.cross_attn.bv);
        ad::Var a2 = g.attention(q2, k2, v2, batch, cfg_.num_heads, cross_mask);
        x = g.add(x, aff(a2, layer.cross_attn.wo, layer.cross_attn.bo));
        ad::Var h3 = g.layer_norm(x, prm(layer.ln3_g), prm(layer.ln3_b));
        x = g.add(x, aff(g.gelu(aff(h3, layer.ff1_w, layer.ff1_b)), layer.ff2_w,
                         layer.ff2_b));
    }
    (void)n_mem;
    ad::Var out = g.layer_norm(x, prm(dec_ln_g_), prm(dec_ln_b_));
    return aff(out, head_w_, head_b_);
}

ad::Mat KnollingTransformer::forward_encoder(const std::vector<ObjectSpec>& objects,
                                             int num_real) const {
    const int n = static_cast<int>(objects.size());
    if (n < 1 || n > cfg_.max_objects)
        throw std::invalid_argument("forward_encoder: object count out of range");
    ad::Mat lift(n, lift_dim(2));
    for (int j = 0; j < n; ++j)
        lift_pair_into(lift, j, 0, objects[j].width, objects[j].length);
    ad::Mat key_mask;
    const ad::Mat* mask_ptr = nullptr;
    if (num_real >= 0 && num_real < n) {
        key_mask = ad::Mat::Zero(n, n);
        for (int j = num_real; j < n; ++j) key_mask.col(j).setConstant(kNegInf);
        mask_ptr = &key_mask;
    }
    ad::Graph g;
    ad::Var memory = encode_graph(g, lift, 1, n, mask_ptr);
    return g.val(memory);
}

GmmParams KnollingTransformer::decode_step(const std::vector<ObjectSpec>& objects,
                                           const ad::Mat& memory,
                                           const std::vector<std::optional<Vec2>>& placed,
                                           int step, int num_real) const {
    const int n = static_cast<int>(objects.size());
    if (step < 0 || step >= n) throw std::invalid_argument("decode_step: step out of range");
    if (static_cast<int>(placed.size()) != n)
        throw std::invalid_argument("decode_step: placed size mismatch");
    ad::Mat size_lift(n, lift_dim(2));
    ad::Mat pos_lift = ad::Mat::Zero(n, lift_dim(2));
    std::vector<int> pos_src(n, -1);
    for (int j = 0; j < n; ++j) {
        lift_pair_into(size_lift, j, 0, objects[j].width, objects[j].length);
        if (j >= 1 && placed[j - 1].has_value()) {
            lift_pair_into(pos_lift, j, 0, placed[j - 1]->x / kPosScale,
                           placed[j - 1]->y / kPosScale);
            pos_src[j] = j;
        }
    }
    ad::Mat cross;
    const ad::Mat* cross_ptr = nullptr;
    if (num_real >= 0 && num_real < static_cast<int>(memory.rows())) {
        cross = ad::Mat::Zero(n, memory.rows());
        for (Eigen::Index j = num_real; j < memory.rows(); ++j)
            cross.col(j).setConstant(kNegInf);
        cross_ptr = &cross;
    }
    ad::Graph g;
    ad::Var mem = g.constant_ref(&memory);
    ad::Var raw = decode_graph(g, mem, size_lift, pos_lift, pos_src, 1,
                               n, static_cast<int>(memory.rows()), cross_ptr);
    return raw_to_gmm(g.val(raw).row(step), cfg_.num_mixtures, kPosScale);
}

LossOut KnollingTransformer::teacher_loss(ad::Graph& g,
                                          const std::vector<const ScenarioRecord*>& batch,
                                          const std::vector<int>& score_from_slot) const {
    const int B = static_cast<int>(batch.size());
    const int n = static_cast<int>(batch[0]->objects.size());
    const int rows = B * n;
    ad::Mat size_lift(rows, lift_dim(2));
    ad::Mat pos_lift = ad::Mat::Zero(rows, lift_dim(2));
    std::vector<int> pos_src(rows, -1);
    ad::Mat tx(rows, 1), ty(rows, 1), mask(rows, 1);
    for (int s = 0; s < B; ++s) {
        const ScenarioRecord& r = *batch[s];
        for (int j = 0; j < n; ++j) {
            const int i = s * n + j;
            lift_pair_into(size_lift, i, 0, r.objects[j].width, r.objects[j].length);
            if (j >= 1) {
                lift_pair_into(pos_lift, i, 0, r.targets[j - 1].x / kPosScale,
                               r.targets[j - 1].y / kPosScale);
                pos_src[i] = i;
            }
            tx(i, 0) = r.targets[j].x / kPosScale;
            ty(i, 0) = r.targets[j].y / kPosScale;
            mask(i, 0) = j >= score_from_slot[s] ? 1.0 : 0.0;
        }
    }
    ad::Var memory = encode_graph(g, size_lift, B, n, nullptr);
    ad::Var raw = decode_graph(g, memory, size_lift, pos_lift, pos_src, B, n, n, nullptr);
    return gmm_nll_rows(g, raw, tx, ty, std::move(mask), cfg_.num_mixtures);
}

std::vector<std::vector<Vec2>> KnollingTransformer::predict_batch(
    const std::vector<std::vector<ObjectSpec>>& objects, double temperature,
    uint64_t seed) const {
    if (objects.empty()) return {};
    const int B = static_cast<int>(objects.size());
    const int n = static_cast<int>(objects[0].size());
    if (n < 1 || n > cfg_.max_objects)
        throw std::invalid_argument("predict: object count out of range");
    for (const auto& o : objects)
        if (static_cast<int>(o.size()) != n)
            throw std::invalid_argument("predict_batch: mixed object counts");
    const int rows = B * n;
    ad::Mat size_lift(rows, lift_dim(2));
    for (int s = 0; s < B; ++s)
        for (int j = 0; j < n; ++j)
            lift_pair_into(size_lift, s * n + j, 0, objects[s][j].width,
                           objects[s][j].length);
    ad::Mat memory_val;
    {
        ad::Graph g;
        memory_val = g.val(encode_graph(g, size_lift, B, n, nullptr));
    }
    ad::Mat pos_lift = ad::Mat::Zero(rows, lift_dim(2));
    std::vector<int> pos_src(rows, -1);
    std::vector<Rng> rngs;
    rngs.reserve(B);
    for (int s = 0; s < B; ++s) rngs.emplace_back(Rng::derive(seed, s));
    std::vector<std::vector<Vec2>> result(B, std::vector<Vec2>(n));
    for (int t = 0; t < n; ++t) {
        ad::Graph g;
        ad::Var mem = g.constant_ref(&memory_val);
        ad::Var raw = decode_graph(g, mem, size_lift, pos_lift, pos_src, B, n, n, nullptr);
        const ad::Mat& raw_val = g.val(raw);
        for (int s = 0; s < B; ++s) {
            GmmParams p = raw_to_gmm(raw_val.row(s * n + t), cfg_.num_mixtures, kPosScale);
            Vec2 pos = gmm_sample(p, temperature, rngs[s]);
            result[s][t] = pos;
            if (t + 1 < n) {
                const int i = s * n + t + 1;
                lift_pair_into(pos_lift, i, 0, pos.x / kPosScale, pos.y / kPosScale);
                pos_src[i] = i;
            }
        }
    }
    return result;
}

// --------------------------------------------------------------------------
// LSTM baseline

LstmBaseline::LstmBaseline(LstmConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    const int in = cfg_.input_dim;
    const int h = cfg_.hidden;
    w_ = &params_.add("lstm.w", in + h, 4 * h);
    b_ = &params_.add("lstm.b", 1, 4 * h);
    head_w_ = &params_.add("head.w", h, 5 * cfg_.num_mixtures);
    head_b_ = &params_.add("head.b", 1, 5 * cfg_.num_mixtures);
    Rng rng(init_seed);
    glorot_init(*w_, rng);
    glorot_init(*head_w_, rng);
    b_->value.setZero();
    b_->value.row(0).segment(h, h).setConstant(1.0);  // forget-gate bias
    head_b_->value.setZero();
}

std::vector<int32_t> LstmBaseline::config_ints() const {
    return {cfg_.input_dim, cfg_.hidden, cfg_.num_mixtures, cfg_.max_objects};
}

LstmBaseline::StepVars LstmBaseline::lstm_step(ad::Graph& g, ad::Var x, StepVars prev) const {
    const int h = cfg_.hidden;
    auto prm = [&](ad::Tensor* t) { return g.param(&t->value, registry_id(params_, t)); };
    ad::Var z = g.add_rowvec(g.matmul(g.concat_cols(x, prev.h), prm(w_)), prm(b_));
    ad::Var gi = g.sigmoid(g.slice_cols(z, 0, h));
    ad::Var gf = g.sigmoid(g.slice_cols(z, h, h));
    ad::Var gg = g.tanh_act(g.slice_cols(z, 2 * h, h));
    ad::Var go = g.sigmoid(g.slice_cols(z, 3 * h, h));
    ad::Var c = g.add(g.cmul(gi, gg), g.cmul(gf, prev.c));
    ad::Var hh = g.cmul(go, g.tanh_act(c));
    return {hh, c};
}

ad::Var LstmBaseline::step_raw(ad::Graph& g, ad::Var h) const {
    auto prm = [&](ad::Tensor* t) { return g.param(&t->value, registry_id(params_, t)); };
    return g.add_rowvec(g.matmul(h, prm(head_w_)), prm(head_b_));
}

namespace {
void lstm_input_row(ad::Mat& m, Eigen::Index row, const ObjectSpec& spec,
                    const Vec2* prev_pos) {
    const int lift = lift_dim(2);
    lift_pair_into(m, row, 0, spec.width, spec.length);
    if (prev_pos) {
        lift_pair_into(m, row, lift, prev_pos->x / kPosScale, prev_pos->y / kPosScale);
    } else {
        m.row(row).segment(lift, lift).setZero();
    }
}
}  // namespace

GmmParams LstmBaseline::forward_step(const std::vector<ObjectSpec>& objects,
                                     const std::vector<Vec2>& placed_so_far) const {
    const int t = static_cast<int>(placed_so_far.size());
    if (t >= static_cast<int>(objects.size()))
        throw std::invalid_argument("forward_step: all objects already placed");
    ad::Graph g;
    StepVars sv{g.constant(ad::Mat::Zero(1, cfg_.hidden)),
                g.constant(ad::Mat::Zero(1, cfg_.hidden))};
    ad::Var raw{};
    for (int j = 0; j <= t; ++j) {
        ad::Mat x(1, cfg_.input_dim);
        lstm_input_row(x, 0, objects[j], j > 0 ? &placed_so_far[j - 1] : nullptr);
        sv = lstm_step(g, g.constant(std::move(x)), sv);
        if (j == t) raw = step_raw(g, sv.h);
    }
    return raw_to_gmm(g.val(raw).row(0), cfg_.num_mixtures, kPosScale);
}

LossOut LstmBaseline::teacher_loss(ad::Graph& g,
                                   const std::vector<const ScenarioRecord*>& batch,
                                   const std::vector<int>& score_from_slot) const {
    const int B = static_cast<int>(batch.size());
    const int n = static_cast<int>(batch[0]->objects.size());
    StepVars sv{g.constant(ad::Mat::Zero(B, cfg_.hidden)),
                g.constant(ad::Mat::Zero(B, cfg_.hidden))};
    ad::Var total{};
    double scored = 0.0;
    for (int t = 0; t < n; ++t) {
        ad::Mat x(B, cfg_.input_dim);
        ad::Mat tx(B, 1), ty(B, 1), mask(B, 1);
        for (int s = 0; s < B; ++s) {
            const ScenarioRecord& r = *batch[s];
            lstm_input_row(x, s, r.objects[t], t > 0 ? &r.targets[t - 1] : nullptr);
            tx(s, 0) = r.targets[t].x / kPosScale;
            ty(s, 0) = r.targets[t].y / kPosScale;
            mask(s, 0) = t >= score_from_slot[s] ? 1.0 : 0.0;
        }
        sv = lstm_step(g, g.constant(std::move(x)), sv);
        LossOut lo = gmm_nll_rows(g, step_raw(g, sv.h), tx, ty, std::move(mask),
                                  cfg_.num_mixtures);
        total = total.valid() ? g.add(total, lo.loss_sum) : lo.loss_sum;
        scored += lo.scored;
    }
    return {total, scored};
}

std::vector<std::vector<Vec2>> LstmBaseline::predict_batch(
    const std::vector<std::vector<ObjectSpec>>& objects, double temperature,
    uint64_t seed) const {
    if (objects.empty()) return {};
    const int B = static_cast<int>(objects.size());
    const int n = static_cast<int>(objects[0].size());
    std::vector<Rng> rngs;
    rngs.reserve(B);
    for (int s = 0; s < B; ++s) rngs.emplace_back(Rng::derive(seed, s));
    std::vector<std::vector<Vec2>> result(B, std::vector<Vec2>(n));
    ad::Graph g;
    StepVars sv{g.constant(ad::Mat::Zero(B, cfg_.hidden)),
                g.constant(ad::Mat::Zero(B, cfg_.hidden))};
    for (int t = 0; t < n; ++t) {
        ad::Mat x(B, cfg_.input_dim);
        for (int s = 0; s < B; ++s)
            lstm_input_row(x, s, objects[s][t], t > 0 ? &result[s][t - 1] : nullptr);
        sv = lstm_step(g, g.constant(std::move(x)), sv);
        const ad::Mat& raw = g.val(step_raw(g, sv.h));
        for (int s = 0; s < B; ++s) {
            GmmParams p = raw_to_gmm(raw.row(s), cfg_.num_mixtures, kPosScale);
            result[s][t] = gmm_sample(p, temperature, rngs[s]);
        }
    }
    return result;
}

// --------------------------------------------------------------------------
// MLP baseline

MlpBaseline::MlpBaseline(MlpConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    const int in = cfg_.slots * cfg_.per_slot;
    const int out = cfg_.slots * 5 * cfg_.num_mixtures;
    w1_ = &params_.add("mlp.w1", in, cfg_.hidden1);
    b1_ = &params_.add("mlp.b1", 1, cfg_.hidden1);
    w2_ = &params_.add("mlp.w2", cfg_.hidden1, cfg_.hidden2);
    b2_ = &params_.add("mlp.b2", 1, cfg_.hidden2);
    w3_ = &params_.add("mlp.w3", cfg_.hidden2, out);
    b3_ = &params_.add("mlp.b3", 1, out);
    Rng rng(init_seed);
    glorot_init(*w1_, rng);
    glorot_init(*w2_, rng);
    glorot_init(*w3_, rng);
    b1_->value.setZero();
    b2_->value.setZero();
    b3_->value.setZero();
}

std::vector<int32_t> MlpBaseline::config_ints() const {
    return {cfg_.slots, cfg_.per_slot, cfg_.hidden1, cfg_.hidden2, cfg_.num_mixtures};
}

ad::Var MlpBaseline::forward_raw(ad::Graph& g, const ad::Mat& input) const {
    auto prm = [&](ad::Tensor* t) { return g.param(&t->value, registry_id(params_, t)); };
    auto aff = [&](ad::Var x, ad::Tensor* w, ad::Tensor* b) {
        return g.add_rowvec(g.matmul(x, prm(w)), prm(b));
    };
    ad::Var h1 = g.gelu(aff(g.constant(input), w1_, b1_));
    ad::Var h2 = g.gelu(aff(h1, w2_, b2_));
    return g.reshape_rows(aff(h2, w3_, b3_), cfg_.slots);
}

namespace {
ad::Mat mlp_input(const std::vector<const std::vector<ObjectSpec>*>& objects, int slots,
                  int per_slot) {
    ad::Mat input = ad::Mat::Zero(static_cast<Eigen::Index>(objects.size()),
                                  static_cast<Eigen::Index>(slots) * per_slot);
    for (size_t s = 0; s < objects.size(); ++s) {
        const auto& objs = *objects[s];
        for (size_t j = 0; j < objs.size(); ++j) {
            lift_pair_into(input, static_cast<Eigen::Index>(s),
                           static_cast<Eigen::Index>(j) * per_slot, objs[j].width,
                           objs[j].length);
        }
    }
    return input;
}
}  // namespace

std::vector<GmmParams> MlpBaseline::forward_all(const std::vector<ObjectSpec>& objects) const {
    if (static_cast<int>(objects.size()) > cfg_.slots)
        throw std::invalid_argument("forward_all: too many objects");
    ad::Graph g;
    ad::Var raw = forward_raw(g, mlp_input({&objects}, cfg_.slots, cfg_.per_slot));
    std::vector<GmmParams> out;
    out.reserve(cfg_.slots);
    for (int j = 0; j < cfg_.slots; ++j)
        out.push_back(raw_to_gmm(g.val(raw).row(j), cfg_.num_mixtures, kPosScale));
    return out;
}

LossOut MlpBaseline::teacher_loss(ad::Graph& g,
                                  const std::vector<const ScenarioRecord*>& batch,
                                  const std::vector<int>& score_from_slot) const {
    const int B = static_cast<int>(batch.size());
    const int n = static_cast<int>(batch[0]->objects.size());
    std::vector<const std::vector<ObjectSpec>*> objs(B);
    for (int s = 0; s < B; ++s) objs[s] = &batch[s]->objects;
    const int rows = B * cfg_.slots;
    ad::Mat tx = ad::Mat::Zero(rows, 1), ty = ad::Mat::Zero(rows, 1),
            mask = ad::Mat::Zero(rows, 1);
    for (int s = 0; s < B; ++s) {
        const ScenarioRecord& r = *batch[s];
        for (int j = 0; j < n; ++j) {
            const int i = s * cfg_.slots + j;
            tx(i, 0) = r.targets[j].x / kPosScale;
            ty(i, 0) = r.targets[j].y / kPosScale;
            mask(i, 0) = j >= score_from_slot[s] ? 1.0 : 0.0;
        }
    }
    ad::Var raw = forward_raw(g, mlp_input(objs, cfg_.slots, cfg_.per_slot));
    return gmm_nll_rows(g, raw, tx, ty, std::move(mask), cfg_.num_mixtures);
}

std::vector<std::vector<Vec2>> MlpBaseline::predict_batch(
    const std::vector<std::vector<ObjectSpec>>& objects, double temperature,
    uint64_t seed) const {
    if (objects.empty()) return {};
    const int B = static_cast<int>(objects.size());
    const int n = static_cast<int>(objects[0].size());
    std::vector<const std::vector<ObjectSpec>*> objs(B);
    for (int s = 0; s < B; ++s) objs[s] = &objects[s];
    ad::Graph g;
    ad::Var raw = forward_raw(g, mlp_input(objs, cfg_.slots, cfg_.per_slot));
    const ad::Mat& raw_val = g.val(raw);
    std::vector<std::vector<Vec2>> result(B, std::vector<Vec2>(n));
    for (int s = 0; s < B; ++s) {
        Rng rng(Rng::derive(seed, s));
        for (int t = 0; t < n; ++t) {
            GmmParams p =
                raw_to_gmm(raw_val.row(s * cfg_.slots + t), cfg_.num_mixtures, kPosScale);
            result[s][t] = gmm_sample(p, temperature, rng);
        }
    }
    return result;
}

// --------------------------------------------------------------------------
// persistence

void ModelBase::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(os, 1);  // version
    write_pod<uint32_t>(os, static_cast<uint32_t>(kind()));
    auto cfg = config_ints();
    write_pod<uint32_t>(os, static_cast<uint32_t>(cfg.size()));
    for (int32_t v : cfg) write_pod<int32_t>(os, v);
    write_pod<uint64_t>(os, params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        const ad::Tensor& t = params_.at(i);
        write_pod<uint32_t>(os, static_cast<uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(t.value.rows()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(t.value.cols()));
        for (Eigen::Index c = 0; c < t.value.cols(); ++c)
            for (Eigen::Index r = 0; r < t.value.rows(); ++r)
                write_pod<float>(os, static_cast<float>(t.value(r, c)));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::unique_ptr<ModelBase> ModelBase::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a model file: " + path);
    uint32_t version = read_pod<uint32_t>(is);
    if (version != 1) throw std::runtime_error("unsupported model version");
    auto kind = static_cast<ModelKind>(read_pod<uint32_t>(is));
    uint32_t n_cfg = read_pod<uint32_t>(is);
    std::vector<int32_t> cfg(n_cfg);
    for (auto& v : cfg) v = read_pod<int32_t>(is);

    std::unique_ptr<ModelBase> model;
    switch (kind) {
        case ModelKind::Transformer: {
            if (n_cfg != 7) throw std::runtime_error("bad transformer config");
            ModelConfig c{cfg[0], cfg[1], cfg[2], cfg[3], cfg[4], cfg[5], cfg[6]};
            model = std::make_unique<KnollingTransformer>(c);
            break;
        }
        case ModelKind::Lstm: {
            if (n_cfg != 4) throw std::runtime_error("bad lstm config");
            LstmConfig c{cfg[0], cfg[1], cfg[2], cfg[3]};
            model = std::make_unique<LstmBaseline>(c);
            break;
        }
        case ModelKind::Mlp: {
            if (n_cfg != 5) throw std::runtime_error("bad mlp config");
            MlpConfig c{cfg[0], cfg[1], cfg[2], cfg[3], cfg[4]};
            model = std::make_unique<MlpBaseline>(c);
            break;
        }
        default:
            throw std::runtime_error("unknown model kind");
    }
    uint64_t n_tensors = read_pod<uint64_t>(is);
    if (n_tensors != model->params_.size())
        throw std::runtime_error("model file tensor count mismatch");
    for (size_t i = 0; i < n_tensors; ++i) {
        ad::Tensor& t = model->params_.at(i);
        uint32_t name_len = read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t rows = read_pod<uint32_t>(is);
        uint32_t cols = read_pod<uint32_t>(is);
        if (name != t.name || rows != t.value.rows() || cols != t.value.cols())
            throw std::runtime_error("model file tensor layout mismatch at " + t.name);
        for (uint32_t c = 0; c < cols; ++c)
            for (uint32_t r = 0; r < rows; ++r)
                t.value(r, c) = static_cast<double>(read_pod<float>(is));
    }
    if (!is) throw std::runtime_error("truncated model file: " + path);
    return model;
}

}  // namespace knolling
