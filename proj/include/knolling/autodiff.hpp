#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace knolling::ad {

using Mat = Eigen::MatrixXd;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense double matrices. Values are computed
// eagerly when an op is recorded; backward() replays the tape in reverse.
// One Graph per forward pass; graphs are cheap to build and throw away.
class Graph {
public:
    Var constant(Mat value);
    Var constant_ref(const Mat* value);          // non-owning, caller keeps it alive
    Var param(const Mat* value, int param_id);   // gradient leaf

    const Mat& val(Var v) const;
    const Mat& grad(Var v) const;                // zero-sized if never touched

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var cmul(Var a, Var b);  // elementwise
    Var cdiv(Var a, Var b);  // elementwise
    Var add_rowvec(Var a, Var row);              // broadcast a 1 x C row
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var gelu(Var a);
    Var sigmoid(Var a);
    Var tanh_act(Var a);
    Var softplus(Var a);
    Var log_elem(Var a);
    Var square(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var softmax_rows(Var a);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, int first, int count);
    Var rep_cols(Var column, int count);         // column is R x 1
    Var lse_cols(Var a);                         // R x K -> R x 1 log-sum-exp
    Var sum_rows_weighted(Var column, Mat weights);  // R x 1 -> 1 x 1
    // Row i of the result is rows.row(src[i]) when src[i] >= 0, else
    // single.row(0). Used to splice mask-token rows into embeddings.
    Var compose_rows(Var rows, Var single, std::vector<int> src);
    // Split each row into `groups` consecutive segments stacked as rows:
    // R x (G*C) -> (R*G) x C.
    Var reshape_rows(Var a, int groups);
    // Batched multi-head attention. q is (batch*n_q) x d, k and v are
    // (batch*n_k) x d; add_mask, when given, is n_q x n_k and shared by
    // every scenario in the batch (0 = visible, -inf = hidden).
    Var attention(Var q, Var k, Var v, int batch, int heads, const Mat* add_mask);

    void backward(Var root);  // root must be 1 x 1
    std::vector<std::pair<int, const Mat*>> param_grads() const;
    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        const Mat* external = nullptr;
        Mat grad;
        bool requires_grad = false;
        int param_id = -1;
        std::function<void()> backward;
    };

    int push(Mat value, bool requires_grad, std::function<void()> back = {});
    Mat& grad_buf(int id);
    bool needs(Var v) const { return nodes_[v.id].requires_grad; }

    std::vector<Node> nodes_;
    friend struct GraphDetail;
};

// Parameter tensor with Adam state.
struct Tensor {
    std::string name;
    Mat value;
    Mat grad;
    Mat m, v;  // Adam moments

    Tensor(std::string n, int rows, int cols)
        : name(std::move(n)),
          value(Mat::Zero(rows, cols)),
          grad(Mat::Zero(rows, cols)),
          m(Mat::Zero(rows, cols)),
          v(Mat::Zero(rows, cols)) {}
    size_t size() const { return static_cast<size_t>(value.size()); }
};

class ParamRegistry {
public:
    Tensor& add(const std::string& name, int rows, int cols);
    Tensor& at(size_t i) { return *tensors_[i]; }
    const Tensor& at(size_t i) const { return *tensors_[i]; }
    size_t size() const { return tensors_.size(); }
    size_t scalar_count() const;
    void zero_grad();
    std::vector<Mat> snapshot_values() const;
    void restore_values(const std::vector<Mat>& values);

private:
    std::vector<std::unique_ptr<Tensor>> tensors_;
};

}  // namespace knolling::ad
