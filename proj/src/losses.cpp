#include "mama/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mama/errors.hpp"

namespace mama {

void Temperatures::validate() const {
  if (!(tau1 > 0) || !(tau2 > 0) || !(tau_local > 0))
    throw ConfigError("temperatures must be strictly positive");
}

double local_weight(std::int64_t step, std::int64_t delta, double w_max) {
  if (step < 0) throw InputError("step must be non-negative");
  return step < delta ? 0.0 : w_max;
}

namespace ad_loss {

namespace {

void require_finite(ad::Var x, const char* what) {
  if (!all_finite(x.value())) throw NumericError(std::string(what) + ": non-finite input");
}

// −mean_i log softmax(row i)[target_i], where target is given as a 0/1 matrix.
ad::Var picked_nll(ad::Var logits, const Matrix& onehot) {
  ad::Var ls = ad::log_softmax_rows(logits);
  ad::Var picked = ad::sum_all(ad::mul(ls, logits.tape().constant(onehot)));
  return ad::scale(picked, -1.0 / static_cast<double>(logits.rows()));
}

ad::Var diag_nll(ad::Var logits) {
  return ad::scale(ad::mean_all(ad::diagonal(ad::log_softmax_rows(logits))), -1.0);
}

// ½ (row CE + column CE) with the diagonal as target.
ad::Var symmetric_ce(ad::Var logits) {
  return ad::scale(ad::add(diag_nll(logits), diag_nll(ad::transpose(logits))), 0.5);
}

}  // namespace

ad::Var info_nce_vv(ad::Var v, ad::Var v_pos, double tau1, bool full_2b) {
  require_finite(v, "info_nce_vv");
  require_finite(v_pos, "info_nce_vv");
  if (v.rows() == 0 || v.rows() != v_pos.rows()) throw ShapeError("info_nce_vv: batch shapes differ");
  const std::size_t b = v.rows();
  ad::Var a = ad::normalize_rows(v);
  ad::Var p = ad::normalize_rows(v_pos);
  if (!full_2b) {
    // row i: positive on the diagonal, other primary views off the diagonal
    ad::Var sim = ad::matmul_nt(a, a);
    ad::Var logits = ad::scale(ad::with_diagonal(sim, ad::row_dot(a, p)), 1.0 / tau1);
    return diag_nll(logits);
  }
  const ad::Var parts[] = {a, p};
  ad::Var z = ad::concat_rows(parts);
  Matrix mask(2 * b, 2 * b), onehot(2 * b, 2 * b);
  for (std::size_t i = 0; i < 2 * b; ++i) {
    mask(i, i) = -1e9;
    onehot(i, (i + b) % (2 * b)) = 1.0;
  }
  ad::Var logits = ad::add_const(ad::scale(ad::matmul_nt(z, z), 1.0 / tau1), mask);
  return picked_nll(logits, onehot);
}

ad::Var clip_vt(ad::Var v, ad::Var t, ad::Var tau2, bool symmetric) {
  require_finite(v, "clip_vt");
  require_finite(t, "clip_vt");
  if (v.rows() == 0 || v.rows() != t.rows()) throw ShapeError("clip_vt: batch shapes differ");
  if (!(tau2.scalar() > 0)) throw NumericError("clip_vt: temperature must be positive");
  ad::Var logits = ad::div_scalar(ad::matmul_nt(ad::normalize_rows(v), ad::normalize_rows(t)), tau2);
  return symmetric ? symmetric_ce(logits) : diag_nll(logits);
}

std::pair<ad::Var, ad::Var> local_scores(std::span<const ad::Var> sentences, std::span<const ad::Var> patches) {
  const std::size_t b = sentences.size();
  if (b == 0 || patches.size() != b) throw ShapeError("local_scores: need one sentence and patch set per sample");
  std::vector<ad::Var> s_norm, p_norm;
  std::vector<std::size_t> s_off{0}, p_off{0};
  for (std::size_t j = 0; j < b; ++j) {
    if (sentences[j].rows() == 0) throw InputError("report " + std::to_string(j) + " has no sentences");
    if (patches[j].rows() == 0) throw InputError("image " + std::to_string(j) + " has no patches");
    require_finite(sentences[j], "local_scores");
    require_finite(patches[j], "local_scores");
    s_norm.push_back(ad::normalize_rows(sentences[j]));
    p_norm.push_back(ad::normalize_rows(patches[j]));
    s_off.push_back(s_off.back() + sentences[j].rows());
    p_off.push_back(p_off.back() + patches[j].rows());
  }
  // One product holds every C_{i,j}: rows are sentences, columns are patches.
  ad::Var g = ad::matmul_nt(ad::concat_rows(s_norm), ad::concat_rows(p_norm));
  const Matrix& gv = g.value();

  // c^V(i, j) = mean_{s in j} max_{k in i} G(s, k);  c^T(i, j) = mean_{k in i} max_{s in j} G(s, k)
  Matrix cv(b, b), ct(b, b);
  std::vector<std::size_t> arg_v(s_off.back() * b), arg_t(p_off.back() * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double acc = 0.0;
      for (std::size_t s = s_off[j]; s < s_off[j + 1]; ++s) {
        std::size_t best = p_off[i];
        for (std::size_t k = p_off[i] + 1; k < p_off[i + 1]; ++k)
          if (gv(s, k) > gv(s, best)) best = k;
        arg_v[s * b + i] = best;
        acc += gv(s, best);
      }
      cv(i, j) = acc / static_cast<double>(s_off[j + 1] - s_off[j]);
      acc = 0.0;
      for (std::size_t k = p_off[i]; k < p_off[i + 1]; ++k) {
        std::size_t best = s_off[j];
        for (std::size_t s = s_off[j] + 1; s < s_off[j + 1]; ++s)
          if (gv(s, k) > gv(best, k)) best = s;
        arg_t[k * b + j] = best;
        acc += gv(best, k);
      }
      ct(i, j) = acc / static_cast<double>(p_off[i + 1] - p_off[i]);
    }

  ad::Tape& tape = g.tape();
  ad::Var v_score = tape.record(std::move(cv), {g}, [ig = g.id(), b, s_off, arg_v](ad::Tape& t, std::size_t self) {
    const Matrix& up = t.grad(self);
    Matrix& gg = t.grad_buffer(ig);
    for (std::size_t j = 0; j < b; ++j) {
      const double inv = 1.0 / static_cast<double>(s_off[j + 1] - s_off[j]);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t s = s_off[j]; s < s_off[j + 1]; ++s) gg(s, arg_v[s * b + i]) += up(i, j) * inv;
    }
  });
  ad::Var t_score = tape.record(std::move(ct), {g}, [ig = g.id(), b, p_off, arg_t](ad::Tape& t, std::size_t self) {
    const Matrix& up = t.grad(self);
    Matrix& gg = t.grad_buffer(ig);
    for (std::size_t i = 0; i < b; ++i) {
      const double inv = 1.0 / static_cast<double>(p_off[i + 1] - p_off[i]);
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = p_off[i]; k < p_off[i + 1]; ++k) gg(arg_t[k * b + j], k) += up(i, j) * inv;
    }
  });
  return {v_score, t_score};
}

std::pair<ad::Var, ad::Var> local_loss(std::span<const ad::Var> sentences, std::span<const ad::Var> patches,
                                       double tau_local) {
  auto [cv, ct] = local_scores(sentences, patches);
  return {symmetric_ce(ad::scale(cv, 1.0 / tau_local)), symmetric_ce(ad::scale(ct, 1.0 / tau_local))};
}

GraphLoss total_loss(const GraphInputs& in, const Temperatures& temps, std::int64_t step,
                     const LossOptions& options) {
  temps.validate();
  GraphLoss out;
  const double scheduled = local_weight(step, options.delta, options.w_max);
  const double w = options.use_sla ? scheduled : 0.0;
  std::vector<ad::Var> terms;
  if (options.use_vv) {
    ad::Var l = info_nce_vv(in.v, in.v_pos, temps.tau1, options.full_2b_negatives);
    out.breakdown.l_vv = l.scalar();
    terms.push_back(l);
  }
  ad::Var vt1 = clip_vt(in.v, in.t, in.tau2, options.symmetric_vt);
  ad::Var vt2 = clip_vt(in.v_pos, in.t, in.tau2, options.symmetric_vt);
  out.breakdown.l_vt_primary = vt1.scalar();
  out.breakdown.l_vt_positive = vt2.scalar();
  terms.push_back(vt1);
  terms.push_back(vt2);
  if (options.use_sla) {
    auto [lv, lt] = local_loss(in.sentences, in.patches, temps.tau_local);
    out.breakdown.l_local_v = lv.scalar();
    out.breakdown.l_local_t = lt.scalar();
    // With w = 0 the term is left off the graph; it is still reported.
    if (w != 0.0) terms.push_back(ad::scale(ad::add(lv, lt), 0.5 * w));
  }
  out.breakdown.w = w;
  ad::Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  out.total = total;
  out.breakdown.total = total.scalar();
  if (!std::isfinite(out.breakdown.total)) throw NumericError("total loss is not finite");
  return out;
}

}  // namespace ad_loss

// ---- plain wrappers ---------------------------------------------------------------

double info_nce_vv(const Matrix& v, const Matrix& v_pos, double tau1, bool full_2b) {
  ad::Tape tape;
  return ad_loss::info_nce_vv(tape.constant(v), tape.constant(v_pos), tau1, full_2b).scalar();
}

double clip_vt(const Matrix& v, const Matrix& t, double tau2, bool symmetric) {
  ad::Tape tape;
  return ad_loss::clip_vt(tape.constant(v), tape.constant(t), tape.constant(Matrix(1, 1, tau2)), symmetric)
      .scalar();
}

CorrespondenceMatrix correspondence_matrix(const Matrix& sentences, const Matrix& patches) {
  if (sentences.cols() != patches.cols()) throw ShapeError("correspondence_matrix: feature widths differ");
  ad::Tape tape;
  CorrespondenceMatrix c;
  c.values = ad::matmul_nt(ad::normalize_rows(tape.constant(sentences)), ad::normalize_rows(tape.constant(patches)))
                 .value();
  c.sentence_mask.assign(sentences.rows(), true);
  return c;
}

namespace {
void check_mask(const CorrespondenceMatrix& c) {
  if (c.sentence_mask.size() != c.values.rows()) throw ShapeError("sentence mask length differs from rows");
  if (c.values.cols() == 0) throw InputError("correspondence matrix has no patches");
  if (std::none_of(c.sentence_mask.begin(), c.sentence_mask.end(), [](bool b) { return b; }))
    throw InputError("every sentence is masked");
}
}  // namespace

double visual_local_score(const CorrespondenceMatrix& c) {
  check_mask(c);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < c.values.rows(); ++j) {
    if (!c.sentence_mask[j]) continue;
    const auto row = c.values.row(j);
    acc += *std::max_element(row.begin(), row.end());
    ++n;
  }
  return acc / static_cast<double>(n);
}

double text_local_score(const CorrespondenceMatrix& c) {
  check_mask(c);
  double acc = 0.0;
  for (std::size_t k = 0; k < c.values.cols(); ++k) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.values.rows(); ++j)
      if (c.sentence_mask[j]) best = std::max(best, c.values(j, k));
    acc += best;
  }
  return acc / static_cast<double>(c.values.cols());
}

namespace {
struct ConstInputs {
  ad::Tape tape;
  std::vector<ad::Var> s, p;
  ConstInputs(const std::vector<Matrix>& sentences, const std::vector<Matrix>& patches) {
    for (const auto& m : sentences) s.push_back(tape.constant(m));
    for (const auto& m : patches) p.push_back(tape.constant(m));
  }
};
}  // namespace

std::pair<Matrix, Matrix> local_score_matrices(const std::vector<Matrix>& sentences,
                                               const std::vector<Matrix>& patches) {
  ConstInputs in(sentences, patches);
  auto [cv, ct] = ad_loss::local_scores(in.s, in.p);
  return {cv.value(), ct.value()};
}

std::pair<double, double> local_loss(const std::vector<Matrix>& sentences, const std::vector<Matrix>& patches,
                                     double tau_local) {
  ConstInputs in(sentences, patches);
  auto [lv, lt] = ad_loss::local_loss(in.s, in.p, tau_local);
  return {lv.scalar(), lt.scalar()};
}

LossBreakdown total_loss(const BatchEmbeddings& emb, const Temperatures& temps, std::int64_t step,
                         const LossOptions& options) {
  ConstInputs in(emb.sentences, emb.patches);
  ad_loss::GraphInputs g{in.tape.constant(emb.v), in.tape.constant(emb.v_pos), in.tape.constant(emb.t), in.s, in.p,
                         in.tape.constant(Matrix(1, 1, temps.tau2))};
  return ad_loss::total_loss(g, temps, step, options).breakdown;
}

}  // namespace mama
