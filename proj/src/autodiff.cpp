#include "knolling/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace knolling::ad {

namespace {
// Graphs churn through many large short-lived matrices; keeping them on
// the heap instead of per-allocation mmap/munmap avoids re-faulting the
// pages on every batch.
const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return true;
}();
}  // namespace

namespace {
// Vectorized activations built on exp, which Eigen packetizes for doubles
// (erf and tanh fall back to scalar libm there). Inputs are clamped where
// saturation makes the tail exactly flat at double precision.
using Arr = Eigen::ArrayXXd;

Arr fast_sigmoid(const Arr& x) {
    return 1.0 / (1.0 + (-x.min(40.0).max(-40.0)).exp());
}
Arr fast_tanh(const Arr& x) {
    return 1.0 - 2.0 / ((2.0 * x.min(20.0).max(-20.0)).exp() + 1.0);
}
constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

int Graph::push(Mat value, bool requires_grad, std::function<void()> back) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.backward = std::move(back);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Graph::constant(Mat value) { return {push(std::move(value), false)}; }

Var Graph::constant_ref(const Mat* value) {
    Node node;
    node.external = value;
    nodes_.push_back(std::move(node));
    return {static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const Mat* value, int param_id) {
    Node node;
    node.external = value;
    node.requires_grad = true;
    node.param_id = param_id;
    nodes_.push_back(std::move(node));
    return {static_cast<int>(nodes_.size()) - 1};
}

const Mat& Graph::val(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
}

const Mat& Graph::grad(Var v) const { return nodes_.at(v.id).grad; }

Mat& Graph::grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
        const Mat& v = n.external ? *n.external : n.value;
        n.grad = Mat::Zero(v.rows(), v.cols());
    }
    return n.grad;
}

void Graph::backward(Var root) {
    if (val(root).rows() != 1 || val(root).cols() != 1)
        throw std::invalid_argument("backward root must be a scalar");
    grad_buf(root.id)(0, 0) = 1.0;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.requires_grad && n.grad.size() != 0 && n.backward) n.backward();
    }
}

std::vector<std::pair<int, const Mat*>> Graph::param_grads() const {
    std::vector<std::pair<int, const Mat*>> out;
    for (const Node& n : nodes_) {
        if (n.param_id >= 0 && n.grad.size() != 0) out.emplace_back(n.param_id, &n.grad);
    }
    return out;
}

Var Graph::matmul(Var a, Var b) {
    Mat value = val(a) * val(b);
    bool rg = needs(a) || needs(b);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, b]() {
            const Mat& g = nodes_[id].grad;
            if (needs(a)) grad_buf(a.id).noalias() += g * val(b).transpose();
            if (needs(b)) grad_buf(b.id).noalias() += val(a).transpose() * g;
        };
    }
    return {id};
}

Var Graph::add(Var a, Var b) {
    Mat value = val(a) + val(b);
    bool rg = needs(a) || needs(b);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, b]() {
            const Mat& g = nodes_[id].grad;
            if (needs(a)) grad_buf(a.id) += g;
            if (needs(b)) grad_buf(b.id) += g;
        };
    }
    return {id};
}

Var Graph::sub(Var a, Var b) {
    Mat value = val(a) - val(b);
    bool rg = needs(a) || needs(b);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, b]() {
            const Mat& g = nodes_[id].grad;
            if (needs(a)) grad_buf(a.id) += g;
            if (needs(b)) grad_buf(b.id) -= g;
        };
    }
    return {id};
}

Var Graph::cmul(Var a, Var b) {
    Mat value = val(a).cwiseProduct(val(b));
    bool rg = needs(a) || needs(b);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, b]() {
            const Mat& g = nodes_[id].grad;
            if (needs(a)) grad_buf(a.id) += g.cwiseProduct(val(b));
            if (needs(b)) grad_buf(b.id) += g.cwiseProduct(val(a));
        };
    }
    return {id};
}

Var Graph::cdiv(Var a, Var b) {
    Mat value = val(a).cwiseQuotient(val(b));
    bool rg = needs(a) || needs(b);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, b]() {
            const Mat& g = nodes_[id].grad;
            if (needs(a)) grad_buf(a.id) += g.cwiseQuotient(val(b));
            if (needs(b)) {
                grad_buf(b.id).array() -=
                    g.array() * val(a).array() / (val(b).array() * val(b).array());
            }
        };
    }
    return {id};
}

Var Graph::add_rowvec(Var a, Var row) {
    Mat value = val(a);
    value.rowwise() += val(row).row(0);
    bool rg = needs(a) || needs(row);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, row]() {
            const Mat& g = nodes_[id].grad;
            if (needs(a)) grad_buf(a.id) += g;
            if (needs(row)) grad_buf(row.id).row(0) += g.colwise().sum();
        };
    }
    return {id};
}

Var Graph::scale(Var a, double s) {
    Mat value = val(a) * s;
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, s]() {
            grad_buf(a.id) += nodes_[id].grad * s;
        };
    }
    return {id};
}

Var Graph::add_scalar(Var a, double s) {
    Mat value = val(a).array() + s;
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a]() { grad_buf(a.id) += nodes_[id].grad; };
    }
    return {id};
}

Var Graph::gelu(Var a) {
    // tanh-form gelu; the cached tanh term serves the backward pass
    const Arr x = val(a).array();
    auto th = std::make_shared<Arr>(fast_tanh(kGeluC * (x + kGeluA * x.cube())));
    Mat value = (0.5 * x * (1.0 + *th)).matrix();
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, th]() {
            const Arr x2 = val(a).array();
            Arr du = kGeluC * (1.0 + 3.0 * kGeluA * x2.square());
            Arr dfn = 0.5 * (1.0 + *th) + 0.5 * x2 * (1.0 - th->square()) * du;
            grad_buf(a.id).array() += nodes_[id].grad.array() * dfn;
        };
    }
    return {id};
}

Var Graph::sigmoid(Var a) {
    Mat value = fast_sigmoid(val(a).array()).matrix();
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a]() {
            const Mat& y = nodes_[id].value;
            grad_buf(a.id).array() +=
                nodes_[id].grad.array() * y.array() * (1.0 - y.array());
        };
    }
    return {id};
}

Var Graph::tanh_act(Var a) {
    Mat value = fast_tanh(val(a).array()).matrix();
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a]() {
            const Mat& y = nodes_[id].value;
            grad_buf(a.id).array() += nodes_[id].grad.array() * (1.0 - y.array() * y.array());
        };
    }
    return {id};
}

Var Graph::softplus(Var a) {
    // log(1+exp(x)), linear past the point where 1 is absorbed
    const Arr x = val(a).array();
    Mat value = (x > 30.0).select(x, ((x.min(30.0)).exp() + 1.0).log()).matrix();
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a]() {
            grad_buf(a.id).array() +=
                nodes_[id].grad.array() * fast_sigmoid(val(a).array());
        };
    }
    return {id};
}

Var Graph::log_elem(Var a) {
    Mat value = val(a).array().log();
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a]() {
            grad_buf(a.id).array() += nodes_[id].grad.array() / val(a).array();
        };
    }
    return {id};
}

Var Graph::square(Var a) {
    Mat value = val(a).array().square();
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a]() {
            grad_buf(a.id).array() += 2.0 * nodes_[id].grad.array() * val(a).array();
        };
    }
    return {id};
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Mat& xv = val(x);
    auto xhat = std::make_shared<Mat>();
    auto inv_std = std::make_shared<Eigen::VectorXd>();
    Eigen::VectorXd mu = xv.rowwise().mean();
    Mat xc = xv.colwise() - mu;
    Eigen::VectorXd var = xc.array().square().rowwise().mean();
    *inv_std = (var.array() + eps).rsqrt();
    *xhat = xc.array().colwise() * inv_std->array();
    Mat value = (xhat->array().rowwise() * val(gamma).row(0).array()).rowwise() +
                val(beta).row(0).array();
    bool rg = needs(x) || needs(gamma) || needs(beta);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, x, gamma, beta, xhat, inv_std]() {
            const Mat& g = nodes_[id].grad;
            if (needs(beta)) grad_buf(beta.id).row(0) += g.colwise().sum();
            if (needs(gamma))
                grad_buf(gamma.id).row(0) += g.cwiseProduct(*xhat).colwise().sum();
            if (needs(x)) {
                Mat dxhat = g.array().rowwise() * val(gamma).row(0).array();
                Eigen::VectorXd m1 = dxhat.rowwise().mean();
                Eigen::VectorXd m2 = dxhat.cwiseProduct(*xhat).rowwise().mean();
                Mat dx = ((dxhat.colwise() - m1).array() -
                          xhat->array().colwise() * m2.array())
                             .colwise() *
                         inv_std->array();
                grad_buf(x.id) += dx.matrix();
            }
        };
    }
    return {id};
}

Var Graph::softmax_rows(Var a) {
    const Mat& x = val(a);
    Mat y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mx = x.row(r).maxCoeff();
        Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
        y.row(r) = e / e.sum();
    }
    bool rg = needs(a);
    int id = push(std::move(y), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a]() {
            const Mat& yv = nodes_[id].value;
            const Mat& g = nodes_[id].grad;
            Eigen::VectorXd dot = g.cwiseProduct(yv).rowwise().sum();
            grad_buf(a.id) += ((g.colwise() - dot).cwiseProduct(yv));
        };
    }
    return {id};
}

Var Graph::concat_cols(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    const int ac = static_cast<int>(av.cols());
    const int bc = static_cast<int>(bv.cols());
    Mat value(av.rows(), ac + bc);
    value << av, bv;
    bool rg = needs(a) || needs(b);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, b, ac, bc]() {
            const Mat& g = nodes_[id].grad;
            if (needs(a)) grad_buf(a.id) += g.leftCols(ac);
            if (needs(b)) grad_buf(b.id) += g.rightCols(bc);
        };
    }
    return {id};
}

Var Graph::slice_cols(Var a, int first, int count) {
    Mat value = val(a).middleCols(first, count);
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, first, count]() {
            grad_buf(a.id).middleCols(first, count) += nodes_[id].grad;
        };
    }
    return {id};
}

Var Graph::rep_cols(Var column, int count) {
    Mat value = val(column).replicate(1, count);
    bool rg = needs(column);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, column]() {
            grad_buf(column.id) += nodes_[id].grad.rowwise().sum();
        };
    }
    return {id};
}

Var Graph::lse_cols(Var a) {
    const Mat& x = val(a);
    auto soft = std::make_shared<Mat>(x.rows(), x.cols());
    Mat value(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mx = x.row(r).maxCoeff();
        Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
        double s = e.sum();
        value(r, 0) = mx + std::log(s);
        soft->row(r) = e / s;
    }
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, soft]() {
            const Mat& g = nodes_[id].grad;  // R x 1
            grad_buf(a.id).array() += soft->array().colwise() * g.col(0).array();
        };
    }
    return {id};
}

Var Graph::sum_rows_weighted(Var column, Mat weights) {
    auto w = std::make_shared<Mat>(std::move(weights));
    Mat value(1, 1);
    value(0, 0) = val(column).cwiseProduct(*w).sum();
    bool rg = needs(column);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, column, w]() {
            grad_buf(column.id) += nodes_[id].grad(0, 0) * (*w);
        };
    }
    return {id};
}

Var Graph::compose_rows(Var rows, Var single, std::vector<int> src) {
    const Mat& rv = val(rows);
    const Mat& sv = val(single);
    Mat value(static_cast<Eigen::Index>(src.size()), rv.cols());
    for (size_t i = 0; i < src.size(); ++i) {
        value.row(static_cast<Eigen::Index>(i)) = src[i] >= 0 ? rv.row(src[i]) : sv.row(0);
    }
    bool rg = needs(rows) || needs(single);
    int id = push(std::move(value), rg);
    if (rg) {
        auto srcp = std::make_shared<std::vector<int>>(std::move(src));
        nodes_[id].backward = [this, id, rows, single, srcp]() {
            const Mat& g = nodes_[id].grad;
            for (size_t i = 0; i < srcp->size(); ++i) {
                int s = (*srcp)[i];
                if (s >= 0) {
                    if (needs(rows)) grad_buf(rows.id).row(s) += g.row(static_cast<Eigen::Index>(i));
                } else if (needs(single)) {
                    grad_buf(single.id).row(0) += g.row(static_cast<Eigen::Index>(i));
                }
            }
        };
    }
    return {id};
}

Var Graph::reshape_rows(Var a, int groups) {
    const Mat& x = val(a);
    if (x.cols() % groups != 0)
        throw std::invalid_argument("reshape_rows: groups must divide columns");
    const int segment = static_cast<int>(x.cols()) / groups;
    Mat value(x.rows() * groups, segment);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (int s = 0; s < groups; ++s) {
            value.row(r * groups + s) = x.row(r).segment(s * segment, segment);
        }
    }
    bool rg = needs(a);
    int id = push(std::move(value), rg);
    if (rg) {
        nodes_[id].backward = [this, id, a, groups, segment]() {
            const Mat& g = nodes_[id].grad;
            Mat& ga = grad_buf(a.id);
            for (Eigen::Index r = 0; r < ga.rows(); ++r) {
                for (int s = 0; s < groups; ++s) {
                    ga.row(r).segment(s * segment, segment) += g.row(r * groups + s);
                }
            }
        };
    }
    return {id};
}

Var Graph::attention(Var q, Var k, Var v, int batch, int heads, const Mat* add_mask) {
    const Mat& qv = val(q);
    const Mat& kv = val(k);
    const Mat& vv = val(v);
    const int d = static_cast<int>(qv.cols());
    if (d % heads != 0) throw std::invalid_argument("attention: heads must divide d_model");
    if (qv.rows() % batch != 0 || kv.rows() % batch != 0)
        throw std::invalid_argument("attention: rows not a multiple of batch");
    const int nq = static_cast<int>(qv.rows()) / batch;
    const int nk = static_cast<int>(kv.rows()) / batch;
    const int dh = d / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<Mat>(static_cast<Eigen::Index>(batch) * heads * nq, nk);
    Mat out(qv.rows(), d);
    Mat scores(nq, nk);
    Eigen::ArrayXd row_max(nq), row_sum(nq);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            auto qb = qv.block(b * nq, h * dh, nq, dh);
            auto kb = kv.block(b * nk, h * dh, nk, dh);
            auto vb = vv.block(b * nk, h * dh, nk, dh);
            scores.noalias() = qb * kb.transpose();
            scores *= att_scale;
            if (add_mask) scores += *add_mask;
            auto pb = probs->block((static_cast<Eigen::Index>(b) * heads + h) * nq, 0, nq, nk);
            row_max = scores.rowwise().maxCoeff();
            pb = (scores.colwise() - row_max.matrix()).array().exp();
            row_sum = pb.rowwise().sum();
            pb.array().colwise() /= row_sum;
            out.block(b * nq, h * dh, nq, dh).noalias() = pb * vb;
        }
    }
    bool rg = needs(q) || needs(k) || needs(v);
    int id = push(std::move(out), rg);
    if (rg) {
        nodes_[id].backward = [this, id, q, k, v, batch, heads, nq, nk, dh, att_scale,
                               probs]() {
            const Mat& g = nodes_[id].grad;
            const Mat& qv2 = val(q);
            const Mat& kv2 = val(k);
            const Mat& vv2 = val(v);
            Mat dp(nq, nk), ds(nq, nk);
            Eigen::VectorXd dot(nq);
            for (int b = 0; b < batch; ++b) {
                for (int h = 0; h < heads; ++h) {
                    auto gb = g.block(b * nq, h * dh, nq, dh);
                    auto qb = qv2.block(b * nq, h * dh, nq, dh);
                    auto kb = kv2.block(b * nk, h * dh, nk, dh);
                    auto vb = vv2.block(b * nk, h * dh, nk, dh);
                    auto pb = probs->block((static_cast<Eigen::Index>(b) * heads + h) * nq, 0,
                                           nq, nk);
                    if (needs(v))
                        grad_buf(v.id).block(b * nk, h * dh, nk, dh).noalias() +=
                            pb.transpose() * gb;
                    dp.noalias() = gb * vb.transpose();
                    dot = dp.cwiseProduct(pb).rowwise().sum();
                    ds = (dp.colwise() - dot).cwiseProduct(pb) * att_scale;
                    if (needs(q))
                        grad_buf(q.id).block(b * nq, h * dh, nq, dh).noalias() += ds * kb;
                    if (needs(k))
                        grad_buf(k.id).block(b * nk, h * dh, nk, dh).noalias() +=
                            ds.transpose() * qb;
                }
            }
        };
    }
    return {id};
}

Tensor& ParamRegistry::add(const std::string& name, int rows, int cols) {
    tensors_.push_back(std::make_unique<Tensor>(name, rows, cols));
    return *tensors_.back();
}

size_t ParamRegistry::scalar_count() const {
    size_t total = 0;
    for (const auto& t : tensors_) total += t->size();
    return total;
}

void ParamRegistry::zero_grad() {
    for (auto& t : tensors_) t->grad.setZero();
}

std::vector<Mat> ParamRegistry::snapshot_values() const {
    std::vector<Mat> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) out.push_back(t->value);
    return out;
}

void ParamRegistry::restore_values(const std::vector<Mat>& values) {
    if (values.size() != tensors_.size())
        throw std::invalid_argument("restore_values: size mismatch");
    for (size_t i = 0; i < values.size(); ++i) tensors_[i]->value = values[i];
}

}  // namespace knolling::ad
