/* Candidate-screening kernels for dense patch matching.
 *
 * The matcher's contract is: exact argmax of zero-mean cosine similarity
 * (or argmin of SSD) in float64 with a fixed evaluation order.  These
 * kernels never decide a match; they only emit a conservative candidate
 * superset in float32.  `margin` must dominate the float32 evaluation
 * error, so every key whose exact score could still win is reported.
 * The caller re-scores candidates in exact float64 arithmetic.
 *
 * Layouts: query taps row-major (nq, ntaps), key taps plane-major
 * (ntaps, nkp) with nkp padded to a SIMD multiple; padded key columns
 * carry neutral taps and are dropped here via `ki >= nk`.
 *
 * thr[] carries per-query running bounds (lower bound of the best score
 * for cosine, upper bound of the best SSD) and is updated in place, so
 * a caller may sweep several key blocks in sequence.
 */

#include <stdint.h>

#define CHUNK 1024

static int64_t screen_cosine_plain(const float *restrict qs, int64_t nq,
                                   const float *restrict ks, int64_t nkp,
                                   int64_t nk, float margin, int64_t capacity,
                                   int64_t *restrict out_pairs,
                                   float *restrict thr)
{
    const float *restrict k0 = ks;
    const float *restrict k1 = ks + nkp;
    const float *restrict k2 = ks + 2 * nkp;
    const float *restrict k3 = ks + 3 * nkp;
    const float *restrict k4 = ks + 4 * nkp;
    const float *restrict k5 = ks + 5 * nkp;
    const float *restrict k6 = ks + 6 * nkp;
    const float *restrict k7 = ks + 7 * nkp;
    const float *restrict k8 = ks + 8 * nkp;
    int64_t ncand = 0;
    for (int64_t c0 = 0; c0 < nkp; c0 += CHUNK) {
        int64_t n = nkp - c0 < CHUNK ? nkp - c0 : CHUNK;
        for (int64_t i = 0; i < nq; i++) {
            const float *q = qs + 9 * i;
            const float q0 = q[0], q1 = q[1], q2 = q[2], q3 = q[3], q4 = q[4];
            const float q5 = q[5], q6 = q[6], q7 = q[7], q8 = q[8];
            const float t = thr[i];
            int cnt = 0;
            for (int64_t j = 0; j < n; j++) {
                int64_t jj = c0 + j;
                float num = q0 * k0[jj] + q1 * k1[jj] + q2 * k2[jj]
                          + q3 * k3[jj] + q4 * k4[jj] + q5 * k5[jj]
                          + q6 * k6[jj] + q7 * k7[jj] + q8 * k8[jj];
                cnt += (num + margin > t);
            }
            if (cnt) {
                float tt = t;
                for (int64_t j = 0; j < n; j++) {
                    int64_t jj = c0 + j;
                    float num = q0 * k0[jj] + q1 * k1[jj] + q2 * k2[jj]
                              + q3 * k3[jj] + q4 * k4[jj] + q5 * k5[jj]
                              + q6 * k6[jj] + q7 * k7[jj] + q8 * k8[jj];
                    if (num + margin > tt && jj < nk) {
                        if (ncand < capacity) {
                            out_pairs[2 * ncand] = i;
                            out_pairs[2 * ncand + 1] = jj;
                        }
                        ncand++;
                        float u = num - margin;
                        if (u > tt)
                            tt = u;
                    }
                }
                thr[i] = tt;
            }
        }
    }
    return ncand;
}

#ifdef __AVX512F__
#include <immintrin.h>

#define DOT9(acc, qp)                                                     \
    do {                                                                  \
        acc = _mm512_mul_ps(k0, _mm512_set1_ps((qp)[0]));                 \
        acc = _mm512_fmadd_ps(k1, _mm512_set1_ps((qp)[1]), acc);          \
        acc = _mm512_fmadd_ps(k2, _mm512_set1_ps((qp)[2]), acc);          \
        acc = _mm512_fmadd_ps(k3, _mm512_set1_ps((qp)[3]), acc);          \
        acc = _mm512_fmadd_ps(k4, _mm512_set1_ps((qp)[4]), acc);          \
        acc = _mm512_fmadd_ps(k5, _mm512_set1_ps((qp)[5]), acc);          \
        acc = _mm512_fmadd_ps(k6, _mm512_set1_ps((qp)[6]), acc);          \
        acc = _mm512_fmadd_ps(k7, _mm512_set1_ps((qp)[7]), acc);          \
        acc = _mm512_fmadd_ps(k8, _mm512_set1_ps((qp)[8]), acc);          \
    } while (0)

/* nq must be a multiple of 4 and nkp a multiple of 16 (caller pads). */
static int64_t screen_cosine_avx512(const float *restrict qs, int64_t nq,
                                    const float *restrict ks, int64_t nkp,
                                    int64_t nk, float margin,
                                    int64_t capacity,
                                    int64_t *restrict out_pairs,
                                    float *restrict thr)
{
    const float *restrict p0 = ks;
    const float *restrict p1 = ks + nkp;
    const float *restrict p2 = ks + 2 * nkp;
    const float *restrict p3 = ks + 3 * nkp;
    const float *restrict p4 = ks + 4 * nkp;
    const float *restrict p5 = ks + 5 * nkp;
    const float *restrict p6 = ks + 6 * nkp;
    const float *restrict p7 = ks + 7 * nkp;
    const float *restrict p8 = ks + 8 * nkp;
    const __m512 mg = _mm512_set1_ps(margin);
    int64_t ncand = 0;
    for (int64_t c0 = 0; c0 < nkp; c0 += CHUNK) {
        int64_t n = nkp - c0 < CHUNK ? nkp - c0 : CHUNK;
        for (int64_t i = 0; i < nq; i += 4) {
            const float *qa = qs + 9 * i;
            const float *qb = qa + 9;
            const float *qc = qb + 9;
            const float *qd = qc + 9;
            float ta = thr[i], tb = thr[i + 1], tc = thr[i + 2], td = thr[i + 3];
            __m512 va = _mm512_set1_ps(ta), vb = _mm512_set1_ps(tb);
            __m512 vc = _mm512_set1_ps(tc), vd = _mm512_set1_ps(td);
            for (int64_t j = 0; j < n; j += 16) {
                int64_t jj = c0 + j;
                __m512 k0 = _mm512_loadu_ps(p0 + jj);
                __m512 k1 = _mm512_loadu_ps(p1 + jj);
                __m512 k2 = _mm512_loadu_ps(p2 + jj);
                __m512 k3 = _mm512_loadu_ps(p3 + jj);
                __m512 k4 = _mm512_loadu_ps(p4 + jj);
                __m512 k5 = _mm512_loadu_ps(p5 + jj);
                __m512 k6 = _mm512_loadu_ps(p6 + jj);
                __m512 k7 = _mm512_loadu_ps(p7 + jj);
                __m512 k8 = _mm512_loadu_ps(p8 + jj);
                __m512 na, nb, nc, nd;
                DOT9(na, qa);
                DOT9(nb, qb);
                DOT9(nc, qc);
                DOT9(nd, qd);
                __mmask16 ma = _mm512_cmp_ps_mask(_mm512_add_ps(na, mg), va, _CMP_GT_OQ);
                __mmask16 mb = _mm512_cmp_ps_mask(_mm512_add_ps(nb, mg), vb, _CMP_GT_OQ);
                __mmask16 mc = _mm512_cmp_ps_mask(_mm512_add_ps(nc, mg), vc, _CMP_GT_OQ);
                __mmask16 md = _mm512_cmp_ps_mask(_mm512_add_ps(nd, mg), vd, _CMP_GT_OQ);
                if (ma | mb | mc | md) {
                    float tmp[4][16];
                    float *tq[4] = {&ta, &tb, &tc, &td};
                    __mmask16 ms[4] = {ma, mb, mc, md};
                    _mm512_storeu_ps(tmp[0], na);
                    _mm512_storeu_ps(tmp[1], nb);
                    _mm512_storeu_ps(tmp[2], nc);
                    _mm512_storeu_ps(tmp[3], nd);
                    for (int q = 0; q < 4; q++) {
                        unsigned m = ms[q];
                        while (m) {
                            int lane = __builtin_ctz(m);
                            m &= m - 1;
                            int64_t ki = jj + lane;
                            if (ki >= nk)
                                continue;
                            float num = tmp[q][lane];
                            if (num + margin > *tq[q]) {
                                if (ncand < capacity) {
                                    out_pairs[2 * ncand] = i + q;
                                    out_pairs[2 * ncand + 1] = ki;
                                }
                                ncand++;
                                float u = num - margin;
                                if (u > *tq[q])
                                    *tq[q] = u;
                            }
                        }
                    }
                    va = _mm512_set1_ps(ta);
                    vb = _mm512_set1_ps(tb);
                    vc = _mm512_set1_ps(tc);
                    vd = _mm512_set1_ps(td);
                }
            }
            thr[i] = ta;
            thr[i + 1] = tb;
            thr[i + 2] = tc;
            thr[i + 3] = td;
        }
    }
    return ncand;
}
#endif /* __AVX512F__ */

int64_t screen_cosine(const float *qs, int64_t nq, const float *ks,
                      int64_t nkp, int64_t nk, float margin,
                      int64_t capacity, int64_t *out_pairs, float *thr)
{
#ifdef __AVX512F__
    if (nq % 4 == 0 && nkp % 16 == 0)
        return screen_cosine_avx512(qs, nq, ks, nkp, nk, margin, capacity,
                                    out_pairs, thr);
#endif
    return screen_cosine_plain(qs, nq, ks, nkp, nk, margin, capacity,
                               out_pairs, thr);
}

/* SSD screening (argmin).  thr[] holds per-query upper bounds on the best
 * SSD; padded key columns should carry taps large enough never to win. */
#define GEN_SCREEN_SSD(NAME, NTAPS)                                        \
    int64_t NAME(const float *restrict qs, int64_t nq,                     \
                 const float *restrict ks, int64_t nkp, int64_t nk,        \
                 float margin, int64_t capacity,                           \
                 int64_t *restrict out_pairs, float *restrict thr)         \
    {                                                                      \
        int64_t ncand = 0;                                                 \
        for (int64_t c0 = 0; c0 < nkp; c0 += CHUNK) {                      \
            int64_t n = nkp - c0 < CHUNK ? nkp - c0 : CHUNK;               \
            for (int64_t i = 0; i < nq; i++) {                             \
                const float *q = qs + NTAPS * i;                           \
                const float t = thr[i];                                    \
                int cnt = 0;                                               \
                for (int64_t j = 0; j < n; j++) {                          \
                    int64_t jj = c0 + j;                                   \
                    float ssd = 0.0f;                                      \
                    for (int k = 0; k < NTAPS; k++) {                      \
                        float d = q[k] - ks[(int64_t)k * nkp + jj];        \
                        ssd += d * d;                                      \
                    }                                                      \
                    cnt += (ssd - margin < t);                             \
                }                                                          \
                if (cnt) {                                                 \
                    float tt = t;                                          \
                    for (int64_t j = 0; j < n; j++) {                      \
                        int64_t jj = c0 + j;                               \
                        float ssd = 0.0f;                                  \
                        for (int k = 0; k < NTAPS; k++) {                  \
                            float d = q[k] - ks[(int64_t)k * nkp + jj];    \
                            ssd += d * d;                                  \
                        }                                                  \
                        if (ssd - margin < tt && jj < nk) {                \
                            if (ncand < capacity) {                        \
                                out_pairs[2 * ncand] = i;                  \
                                out_pairs[2 * ncand + 1] = jj;             \
                            }                                              \
                            ncand++;                                       \
                            float u = ssd + margin;                        \
                            if (u < tt)                                    \
                                tt = u;                                    \
                        }                                                  \
                    }                                                      \
                    thr[i] = tt;                                           \
                }                                                          \
            }                                                              \
        }                                                                  \
        return ncand;                                                      \
    }

GEN_SCREEN_SSD(screen_ssd9, 9)
GEN_SCREEN_SSD(screen_ssd36, 36)

/* Order-independent reductions over scored candidate pairs.  The tie rule
 * (equal score -> lower key index wins) makes the result independent of
 * the order candidates were produced in. */
void resolve_pairs_max(const int64_t *qi, const int64_t *ki, const double *s,
                       int64_t n, double *best, int64_t *bidx)
{
    for (int64_t c = 0; c < n; c++) {
        int64_t q = qi[c];
        double v = s[c];
        if (v > best[q] || (v == best[q] && ki[c] < bidx[q])) {
            best[q] = v;
            bidx[q] = ki[c];
        }
    }
}

void resolve_pairs_min(const int64_t *qi, const int64_t *ki, const double *s,
                       int64_t n, double *best, int64_t *bidx)
{
    for (int64_t c = 0; c < n; c++) {
        int64_t q = qi[c];
        double v = s[c];
        if (v < best[q] || (v == best[q] && ki[c] < bidx[q])) {
            best[q] = v;
            bidx[q] = ki[c];
        }
    }
}

/* Minimal module shim: the symbols above are consumed through ctypes. */
#ifndef KEFREE_NO_PYTHON
#include <Python.h>

static struct PyModuleDef screenlib_module = {
    PyModuleDef_HEAD_INIT, "_screenlib",
    "Native screening kernels (functions are accessed via ctypes).",
    -1, NULL,
};

PyMODINIT_FUNC PyInit__screenlib(void)
{
    return PyModule_Create(&screenlib_module);
}
#endif
