#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mama/autograd.hpp"
#include "mama/matrix.hpp"

namespace mama {

struct Temperatures {
  double tau1 = 0.5;        // visual-visual, fixed
  double tau2 = 0.07;       // visual-text, learnable (initial value)
  double tau_local = 0.1;   // local alignment, fixed
  void validate() const;
};

inline constexpr double kTau2Min = 1e-3;
inline constexpr double kTau2Max = 1.0;

struct LossOptions {
  bool use_vv = true;        // visual-visual term on/off
  bool symmetric_vt = true;  // false keeps only the image->text direction
  bool use_sla = true;
  // Every view of the batch (2B rows) acts as a negative instead of only the
  // primary views plus the positive.
  bool full_2b_negatives = false;
  std::int64_t delta = 8000;  // step at which the local term switches on
  double w_max = 1.0;
};

struct LossBreakdown {
  double l_vv = 0, l_vt_primary = 0, l_vt_positive = 0, l_local_v = 0, l_local_t = 0, w = 0, total = 0;
};

struct CorrespondenceMatrix {
  Matrix values;                  // S×P cosine similarities
  std::vector<bool> sentence_mask;  // true = real sentence
};

// w = 0 before `delta`, w_max from then on.
double local_weight(std::int64_t step, std::int64_t delta, double w_max);

// ---- plain evaluations (similarities are cosine; rows need not be unit) ----

double info_nce_vv(const Matrix& v, const Matrix& v_pos, double tau1, bool full_2b = false);
double clip_vt(const Matrix& v, const Matrix& t, double tau2, bool symmetric = true);
CorrespondenceMatrix correspondence_matrix(const Matrix& sentences, const Matrix& patches);
double visual_local_score(const CorrespondenceMatrix& c);
double text_local_score(const CorrespondenceMatrix& c);
// sentences[j]: S_j×d rows of report j; patches[i]: P×d rows of image i.
std::pair<double, double> local_loss(const std::vector<Matrix>& sentences, const std::vector<Matrix>& patches,
                                     double tau_local);
// Cross-pair score matrices: entry (i, j) aggregates sentences of report j
// against patches of image i.
std::pair<Matrix, Matrix> local_score_matrices(const std::vector<Matrix>& sentences,
                                               const std::vector<Matrix>& patches);

struct BatchEmbeddings {
  Matrix v, v_pos, t;  // B×d global embeddings
  std::vector<Matrix> sentences;  // per caption, S_i×d
  std::vector<Matrix> patches;    // per primary image, P×d
};

LossBreakdown total_loss(const BatchEmbeddings& emb, const Temperatures& temps, std::int64_t step,
                         const LossOptions& options);

// ---- graph versions -----------------------------------------------------------

namespace ad_loss {

ad::Var info_nce_vv(ad::Var v, ad::Var v_pos, double tau1, bool full_2b);
ad::Var clip_vt(ad::Var v, ad::Var t, ad::Var tau2, bool symmetric);
// Returns (c^V, c^T), both B×B.
std::pair<ad::Var, ad::Var> local_scores(std::span<const ad::Var> sentences, std::span<const ad::Var> patches);
std::pair<ad::Var, ad::Var> local_loss(std::span<const ad::Var> sentences, std::span<const ad::Var> patches,
                                       double tau_local);

struct GraphInputs {
  ad::Var v, v_pos, t;
  std::vector<ad::Var> sentences;
  std::vector<ad::Var> patches;
  ad::Var tau2;  // 1×1
};

struct GraphLoss {
  ad::Var total;
  LossBreakdown breakdown;
};

GraphLoss total_loss(const GraphInputs& in, const Temperatures& temps, std::int64_t step,
                     const LossOptions& options);

}  // namespace ad_loss

}  // namespace mama
