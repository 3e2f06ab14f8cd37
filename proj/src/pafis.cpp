#include "mmprompt/pafis.hpp"

namespace mmprompt {

namespace {

SelectionMap select_for(const Matrix& h_m, const Matrix& h_t, bool aligned, PooledCorrelation<double>* pooled) {
  if (h_m.cols() >= h_t.cols()) offset_count(h_t.cols(), h_m.cols());
  if (aligned) return select_channels(corr_map_aligned(h_m, h_t), h_m.cols(), true);
  *pooled = corr_map_unaligned(h_m, h_t);
  return select_channels(pooled->corr, h_m.cols(), false);
}

}  // namespace

PafisResult pafis(const Matrix& p_tilde, const Matrix& h_t, std::span<const ModalityState> modalities) {
  if (p_tilde.cols() != h_t.cols()) throw ShapeError("pafis: prompt width differs from d_t");
  PafisResult out;
  out.prompt = p_tilde;
  for (const ModalityState& m : modalities) {
    PooledCorrelation<double> pooled;
    SelectionMap sel = select_for(m.h_m, h_t, m.aligned, &pooled);
    if (m.aligned) {
      out.prompt = assemble_aligned(out.prompt, h_t, m.h_m, sel);
    } else {
      out.prompt = assemble_unaligned(out.prompt, pooled.pooled_m, pooled.pooled_t, sel);
    }
    out.selections.push_back(std::move(sel));
  }
  return out;
}

Var assemble_prompt(Var p_tilde, Var h_t, std::span<const ModalityVar> modalities,
                    std::vector<SelectionMap>* selections) {
  if (p_tilde.cols() != h_t.cols()) throw ShapeError("assemble_prompt: prompt width differs from d_t");
  const Index l_p = p_tilde.rows();
  Var p = p_tilde;
  for (const ModalityVar& m : modalities) {
    const Index d_m = m.h_m.cols();
    PooledCorrelation<double> pooled;
    SelectionMap sel = select_for(m.h_m.value(), h_t.value(), m.aligned, &pooled);
    std::vector<Index> rows;
    std::vector<Index> hi;
    std::vector<Index> lo;
    Var inv_term;
    Var spe_term;
    if (m.aligned) {
      const Index l = h_t.rows();
      for (Index j = 0; j < l; ++j) rows.push_back(j % l_p);
      inv_term = add(m.h_m, gather_windows(h_t, sel.k_max, d_m));
      spe_term = sub(m.h_m, gather_windows(h_t, sel.k_min, d_m));
      hi = sel.k_max;
      lo = sel.k_min;
    } else {
      Var pooled_m = mean_rows(m.h_m);
      Var pooled_t = mean_rows(h_t);
      const Index k_max[] = {sel.k_max[0]};
      const Index k_min[] = {sel.k_min[0]};
      inv_term = broadcast_rows(add(pooled_m, gather_windows(pooled_t, k_max, d_m)), l_p);
      spe_term = broadcast_rows(sub(pooled_m, gather_windows(pooled_t, k_min, d_m)), l_p);
      for (Index r = 0; r < l_p; ++r) rows.push_back(r);
      hi.assign(static_cast<std::size_t>(l_p), sel.k_max[0]);
      lo.assign(static_cast<std::size_t>(l_p), sel.k_min[0]);
    }
    p = scatter_add_windows(p, inv_term, rows, hi);
    p = scatter_add_windows(p, spe_term, rows, lo);
    if (selections != nullptr) selections->push_back(std::move(sel));
  }
  return p;
}

}  // namespace mmprompt
