#include <algorithm>
#include <cmath>

#include "bridgerec/bridge.hpp"
#include "bridgerec/verify.hpp"

namespace bridgerec::verify {

namespace {

MatrixR random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  MatrixR m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Entries bounded away from zero so relu's kink is never inside the stencil.
MatrixR away_from_zero(Index rows, Index cols, Rng& rng) {
  MatrixR m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    const double mag = 0.1 + rng.uniform();
    m.data()[i] = rng.bernoulli(0.5) ? mag : -mag;
  }
  return m;
}

// Reduces an arbitrary output to a scalar with fixed random weights.
Tensor contract(Tape& tape, const Tensor& out, const MatrixR& weights) {
  return ad::sum(tape, ad::mul(tape, out, Tensor::constant(weights)));
}

}  // namespace

double gradient_error(const std::function<Tensor(Tape&)>& loss, const std::vector<Tensor>& wrt,
                      double step) {
  std::vector<Tensor> params = wrt;
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  double worst = 0.0;
  for (auto& p : params) {
    const MatrixR analytic = p.grad();
    MatrixR numeric(p.rows(), p.cols());
    for (Index i = 0; i < p.size(); ++i) {
      double& x = p.mutable_value().data()[i];
      const double keep = x;
      x = keep + step;
      Tape up(false);
      const double f_up = loss(up).item();
      x = keep - step;
      Tape down(false);
      const double f_down = loss(down).item();
      x = keep;
      numeric.data()[i] = (f_up - f_down) / (2.0 * step);
    }
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    worst = std::max(worst, (analytic - numeric).norm() / scale);
    p.zero_grad();
  }
  return worst;
}

std::vector<GradientCase> op_gradient_errors(int instances, std::uint64_t seed) {
  using Op = std::function<double(Rng&)>;
  const std::vector<std::pair<std::string, Op>> ops = {
      {"matmul",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(5, 4, r));
         Tensor b = Tensor::parameter(random_matrix(4, 3, r));
         const MatrixR w = random_matrix(5, 3, r);
         return gradient_error(
             [&](Tape& t) { return contract(t, ad::matmul(t, a, b), w); }, {a, b});
       }},
      {"matmul_nt",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(4, 3, r));
         Tensor b = Tensor::parameter(random_matrix(6, 3, r));
         const MatrixR w = random_matrix(4, 6, r);
         return gradient_error(
             [&](Tape& t) { return contract(t, ad::matmul_nt(t, a, b), w); }, {a, b});
       }},
      {"transpose",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 5, r));
         const MatrixR w = random_matrix(5, 3, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::transpose(t, a), w); },
                               {a});
       }},
      {"add",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 4, r));
         Tensor b = Tensor::parameter(random_matrix(3, 4, r));
         const MatrixR w = random_matrix(3, 4, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::add(t, a, b), w); },
                               {a, b});
       }},
      {"sub",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 4, r));
         Tensor b = Tensor::parameter(random_matrix(3, 4, r));
         const MatrixR w = random_matrix(3, 4, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::sub(t, a, b), w); },
                               {a, b});
       }},
      {"mul",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 4, r));
         Tensor b = Tensor::parameter(random_matrix(3, 4, r));
         const MatrixR w = random_matrix(3, 4, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::mul(t, a, b), w); },
                               {a, b});
       }},
      {"add_row_broadcast",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(4, 3, r));
         Tensor b = Tensor::parameter(random_matrix(1, 3, r));
         const MatrixR w = random_matrix(4, 3, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::add(t, a, b), w); },
                               {a, b});
       }},
      {"mul_row_broadcast",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(4, 3, r));
         Tensor b = Tensor::parameter(random_matrix(1, 3, r));
         const MatrixR w = random_matrix(4, 3, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::mul(t, a, b), w); },
                               {a, b});
       }},
      {"mul_scalar_tensor",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(1, 1, r));
         Tensor b = Tensor::parameter(random_matrix(3, 4, r));
         const MatrixR w = random_matrix(3, 4, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::mul(t, a, b), w); },
                               {a, b});
       }},
      {"add_scalar",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 4, r));
         const double s = r.normal();
         const MatrixR w = random_matrix(3, 4, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::add(t, a, s), w); }, {a});
       }},
      {"mul_scalar",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 4, r));
         const double s = r.normal();
         const MatrixR w = random_matrix(3, 4, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::mul(t, a, s), w); }, {a});
       }},
      {"softmax_rows",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 5, r));
         const MatrixR w = random_matrix(3, 5, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::softmax(t, a, 1), w); },
                               {a});
       }},
      {"softmax_cols",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(5, 3, r));
         const MatrixR w = random_matrix(5, 3, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::softmax(t, a, 0), w); },
                               {a});
       }},
      {"layernorm_rows",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 6, r));
         const MatrixR w = random_matrix(3, 6, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::layernorm(t, a, 1), w); },
                               {a});
       }},
      {"layernorm_cols",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(6, 3, r));
         const MatrixR w = random_matrix(6, 3, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::layernorm(t, a, 0), w); },
                               {a});
       }},
      {"gelu",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(4, 4, r, 2.0));
         const MatrixR w = random_matrix(4, 4, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::gelu(t, a), w); }, {a});
       }},
      {"relu",
       [](Rng& r) {
         Tensor a = Tensor::parameter(away_from_zero(4, 4, r));
         const MatrixR w = random_matrix(4, 4, r);
         return gradient_error([&](Tape& t) { return contract(t, ad::relu(t, a), w); }, {a});
       }},
      {"dropout",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(4, 5, r));
         const MatrixR w = random_matrix(4, 5, r);
         const std::uint64_t key = r.engine()();
         return gradient_error(
             [&](Tape& t) {
               Rng mask(key);
               return contract(t, ad::dropout(t, a, 0.3, mask, true), w);
             },
             {a});
       }},
      {"gather_rows",
       [](Rng& r) {
         Tensor table = Tensor::parameter(random_matrix(6, 3, r));
         std::vector<Index> ids;
         for (int i = 0; i < 5; ++i) ids.push_back(static_cast<Index>(r.index(6)));
         ids.push_back(ids.front());  // a repeated id
         const MatrixR w = random_matrix(6, 3, r);
         return gradient_error(
             [&](Tape& t) { return contract(t, ad::gather_rows<Real>(t, table, ids), w); },
             {table});
       }},
      {"concat_cols",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 2, r));
         Tensor b = Tensor::parameter(random_matrix(3, 4, r));
         const MatrixR w = random_matrix(3, 6, r);
         return gradient_error(
             [&](Tape& t) { return contract(t, ad::concat_cols<Real>(t, {a, b}), w); }, {a, b});
       }},
      {"sum",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 4, r));
         const double s = r.normal();
         return gradient_error(
             [&](Tape& t) { return ad::mul(t, ad::sum(t, ad::mul(t, a, a)), s); }, {a});
       }},
      {"mean",
       [](Rng& r) {
         Tensor a = Tensor::parameter(random_matrix(3, 4, r));
         return gradient_error([&](Tape& t) { return ad::mean(t, ad::mul(t, a, a)); }, {a});
       }},
      {"cross_entropy",
       [](Rng& r) {
         Tensor logits = Tensor::parameter(random_matrix(4, 7, r));
         std::vector<Index> targets;
         for (int i = 0; i < 4; ++i) targets.push_back(static_cast<Index>(r.index(7)));
         return gradient_error([&](Tape& t) { return ad::cross_entropy(t, logits, targets); },
                               {logits});
       }},
      {"causal_attention",
       [](Rng& r) {
         Tensor q = Tensor::parameter(random_matrix(5, 4, r));
         Tensor k = Tensor::parameter(random_matrix(5, 4, r));
         Tensor v = Tensor::parameter(random_matrix(5, 4, r));
         const std::vector<ad::Segment> segs = {{0, 2}, {2, 3}};
         const MatrixR w = random_matrix(5, 4, r);
         return gradient_error(
             [&](Tape& t) {
               return contract(t, ad::causal_attention<Real>(t, q, k, v, segs, 2), w);
             },
             {q, k, v});
       }},
  };

  std::vector<GradientCase> out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    GradientCase gc{ops[i].first, 0.0};
    for (int n = 0; n < instances; ++n) gc.worst = std::max(gc.worst, ops[i].second(rng));
    out.push_back(gc);
  }
  return out;
}

double composite_gradient_error(int instances, std::uint64_t seed) {
  double worst = 0.0;
  for (int n = 0; n < instances; ++n) {
    Rng rng(seed, static_cast<std::uint64_t>(n));
    ModelConfig mc;
    mc.num_items = 5;
    mc.dim = 4;
    mc.blocks = 1;
    mc.heads = 2;
    mc.max_len = 4;
    mc.dropout = 0.2;
    mc.num_conditions = 2;
    mc.mlp_hidden = 6;
    mc.lambda = 100.0;
    Model model(mc, seed + static_cast<std::uint64_t>(n));
    // Move every parameter off its structured initial value (unit gains,
    // zero biases, zero FiLM weights) so no gradient path is degenerate.
    for (const auto& p : model.parameters()) {
      model.parameter(p.name).mutable_value() +=
          random_matrix(p.tensor.rows(), p.tensor.cols(), rng, 0.3);
    }

    const std::vector<std::vector<Index>> histories = {
        {static_cast<Index>(rng.index(5)), static_cast<Index>(rng.index(5))},
        {static_cast<Index>(rng.index(5)), static_cast<Index>(rng.index(5))}};
    const std::vector<Index> conditions = {static_cast<Index>(rng.index(2)), -1};
    const std::vector<Index> targets = {static_cast<Index>(rng.index(5)),
                                        static_cast<Index>(rng.index(5))};
    const std::vector<Real> times = {0.05 + 0.9 * rng.uniform(), 0.05 + 0.9 * rng.uniform()};
    const ScheduleParams schedule{n % 2 == 0 ? ScheduleKind::kGmax : ScheduleKind::kVp, 0.01,
                                  10.0};
    MatrixR w0(2, mc.dim), w1(2, mc.dim), noise(2, mc.dim);
    for (Index i = 0; i < 2; ++i) {
      const auto w = marginal_weights(coeffs<Real>(schedule, times[static_cast<std::size_t>(i)]));
      w0.row(i).setConstant(w.w0);
      w1.row(i).setConstant(w.w1);
      for (Index j = 0; j < mc.dim; ++j) noise(i, j) = w.noise * rng.normal();
    }
    const MatrixR alpha = MatrixR::Constant(2, mc.dim, 1.0) + random_matrix(2, mc.dim, rng, 0.1);
    const ForwardMode mode{true, seed, static_cast<std::uint64_t>(n)};

    auto loss = [&](Tape& tape) {
      const Tensor x1 = model.encode(tape, histories, conditions, mode);
      const Tensor x0 = ad::gather_rows<Real>(tape, model.item_embeddings(), targets);
      const Tensor x_t = ad::add(
          tape,
          ad::add(tape, ad::mul(tape, x0, Tensor::constant(w0)),
                  ad::mul(tape, x1, Tensor::constant(w1))),
          Tensor::constant(noise));
      const Tensor x0_hat = model.predict_x0(tape, x_t, times, x1, alpha);
      return ce_loss(tape, x0_hat, targets, model.item_embeddings());
    };
    std::vector<Tensor> params;
    for (const auto& p : model.parameters()) params.push_back(p.tensor);
    worst = std::max(worst, gradient_error(loss, params));
  }
  return worst;
}

}  // namespace bridgerec::verify
