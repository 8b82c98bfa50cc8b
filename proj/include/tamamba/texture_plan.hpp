#pragma once

// Texture-area filtering: split a feature map into patches, score each
// patch by its population variance, order patches from most to least
// textured and keep the top ceil(p * N).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tamamba/ops.hpp"
#include "tamamba/tensor.hpp"

namespace tamamba::texture {

/// Patch grid laid over a [C,H,W] feature. Extents that do not divide the
/// feature are handled by reflect padding at the bottom/right edges.
struct PatchGeometry {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t patch_h = 0;
    std::size_t patch_w = 0;
    std::size_t padded_h = 0;
    std::size_t padded_w = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t count() const { return rows * cols; }
    std::size_t cells() const { return patch_h * patch_w; }
};

inline PatchGeometry geometry(const Shape& chw, std::size_t patch_h, std::size_t patch_w) {
    if (chw.size() != 3) throw ShapeError("patch geometry expects [C,H,W]");
    if (patch_h == 0 || patch_w == 0) throw ArgumentError("patch extents must be positive");
    PatchGeometry g;
    g.channels = chw[0];
    g.height = chw[1];
    g.width = chw[2];
    g.patch_h = patch_h;
    g.patch_w = patch_w;
    g.rows = (g.height + patch_h - 1) / patch_h;
    g.cols = (g.width + patch_w - 1) / patch_w;
    g.padded_h = g.rows * patch_h;
    g.padded_w = g.cols * patch_w;
    return g;
}

/// Patches of F in row-major grid order, each [C,ph,pw].
inline std::vector<Tensor> patchify(const Tensor& f, std::size_t patch_h, std::size_t patch_w) {
    const PatchGeometry g = geometry(f.shape(), patch_h, patch_w);
    const Tensor padded = pad_reflect_br(f, g.padded_h - g.height, g.padded_w - g.width);
    std::vector<Tensor> out;
    out.reserve(g.count());
    for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) {
            std::vector<std::size_t> src;
            src.reserve(g.channels * g.cells());
            for (std::size_t k = 0; k < g.channels; ++k)
                for (std::size_t y = 0; y < patch_h; ++y)
                    for (std::size_t x = 0; x < patch_w; ++x)
                        src.push_back((k * g.padded_h + r * patch_h + y) * g.padded_w + c * patch_w + x);
            out.push_back(gather(padded, {g.channels, patch_h, patch_w}, std::move(src), "patchify"));
        }
    return out;
}

/// Reassembles patches and crops away any padding.
inline Tensor unpatchify(const std::vector<Tensor>& patches, const PatchGeometry& g) {
    if (patches.size() != g.count()) throw ShapeError("unpatchify: patch count does not match the grid");
    for (const auto& p : patches)
        if (p.shape() != Shape{g.channels, g.patch_h, g.patch_w}) throw ShapeError("unpatchify: patch extent mismatch");
    const Tensor flat = concat_flat(patches);
    const std::size_t per_patch = g.channels * g.cells();
    std::vector<std::size_t> src(g.channels * g.height * g.width);
    for (std::size_t k = 0; k < g.channels; ++k)
        for (std::size_t y = 0; y < g.height; ++y)
            for (std::size_t x = 0; x < g.width; ++x) {
                const std::size_t patch = (y / g.patch_h) * g.cols + x / g.patch_w;
                src[(k * g.height + y) * g.width + x] =
                    patch * per_patch + (k * g.patch_h + y % g.patch_h) * g.patch_w + x % g.patch_w;
            }
    return gather(flat, {g.channels, g.height, g.width}, std::move(src), "unpatchify");
}

/// Population variance over every element of a patch. Values are shifted
/// by the first element first, which makes constant patches exactly 0.
inline real patch_variance(std::span<const real> values) {
    if (values.empty()) return 0;
    const real shift = values[0];
    real mu = 0;
    for (real v : values) mu += v - shift;
    mu /= static_cast<real>(values.size());
    real acc = 0;
    for (real v : values) acc += (v - shift - mu) * (v - shift - mu);
    return acc / static_cast<real>(values.size());
}

inline real patch_variance(const Tensor& patch) { return patch_variance(patch.data()); }

/// Differentiable variance of every patch of F, pooled over channels and
/// space: [C,H,W] -> [rows*cols]. Extents must divide the feature.
inline Tensor patch_variances(const Tensor& f, std::size_t patch_h, std::size_t patch_w) {
    const PatchGeometry g = geometry(f.shape(), patch_h, patch_w);
    if (g.padded_h != g.height || g.padded_w != g.width) {
        throw ShapeError("patch_variances: feature extents must be multiples of the patch extent");
    }
    const std::size_t n = g.count(), hw = g.height * g.width;
    const real count = static_cast<real>(g.channels * g.cells());
    auto means = std::make_shared<std::vector<real>>(n, real(0));
    std::vector<real> var(n, real(0));
    const real* xs = f.data().data();
    auto patch_of = [g](std::size_t y, std::size_t x) { return (y / g.patch_h) * g.cols + x / g.patch_w; };
    // shifted by each patch's first element, as in patch_variance
    std::vector<real> shift(n), mu(n, real(0));
    for (std::size_t p = 0; p < n; ++p) shift[p] = xs[(p / g.cols) * g.patch_h * g.width + (p % g.cols) * g.patch_w];
    for (std::size_t k = 0; k < g.channels; ++k)
        for (std::size_t y = 0; y < g.height; ++y)
            for (std::size_t x = 0; x < g.width; ++x) {
                const std::size_t p = patch_of(y, x);
                mu[p] += xs[k * hw + y * g.width + x] - shift[p];
            }
    for (std::size_t p = 0; p < n; ++p) {
        mu[p] /= count;
        (*means)[p] = mu[p] + shift[p];
    }
    for (std::size_t k = 0; k < g.channels; ++k)
        for (std::size_t y = 0; y < g.height; ++y)
            for (std::size_t x = 0; x < g.width; ++x) {
                const std::size_t p = patch_of(y, x);
                const real d = xs[k * hw + y * g.width + x] - shift[p] - mu[p];
                var[p] += d * d;
            }
    for (auto& v : var) v /= count;
    return Tensor::make_result({n}, std::move(var), "patch_variances", {f},
                               [f, g, means, count, patch_of](std::span<const real> gr,
                                                              std::vector<std::vector<real>>& gin) {
                                   const real* xs = f.data().data();
                                   const std::size_t hw = g.height * g.width;
                                   for (std::size_t k = 0; k < g.channels; ++k)
                                       for (std::size_t y = 0; y < g.height; ++y)
                                           for (std::size_t x = 0; x < g.width; ++x) {
                                               const std::size_t p = patch_of(y, x);
                                               const std::size_t i = k * hw + y * g.width + x;
                                               gin[0][i] += gr[p] * real(2) * (xs[i] - (*means)[p]) / count;
                                           }
                               });
}

/// Descending-variance ordering of the patch grid with the top-p cut.
struct PatchPlan {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<real> variances;   // per patch, grid order
    std::vector<std::size_t> perm; // perm[i] = grid index of the i-th most textured patch
    std::size_t selected_count = 0;
    real p = 1;

    std::size_t count() const { return variances.size(); }
    /// Grid indices of the processed patches, most textured first.
    std::span<const std::size_t> selected() const { return {perm.data(), selected_count}; }
    std::span<const std::size_t> skipped() const {
        return {perm.data() + selected_count, perm.size() - selected_count};
    }
};

/// ceil(p * n) with a guard against p*n landing a hair above an integer.
inline std::size_t top_count(real p, std::size_t n) {
    const double exact = static_cast<double>(p) * static_cast<double>(n);
    const double rounded = std::round(exact);
    const double v = std::abs(exact - rounded) < 1e-9 ? rounded : std::ceil(exact);
    return std::clamp<std::size_t>(static_cast<std::size_t>(v), 1, n);
}

/// Sorts patches by variance (descending, ties by ascending grid index)
/// and keeps ceil(p * N) of them.
inline PatchPlan build_patch_plan(std::span<const real> variances, real p, std::size_t rows = 0,
                                  std::size_t cols = 0) {
    if (variances.empty()) throw ArgumentError("build_patch_plan: no patches");
    if (!(p > real(0) && p <= real(1))) throw ArgumentError("build_patch_plan: p must lie in (0, 1]");
    PatchPlan plan;
    plan.rows = rows ? rows : 1;
    plan.cols = cols ? cols : variances.size();
    if (plan.rows * plan.cols != variances.size()) throw ShapeError("build_patch_plan: grid does not match count");
    plan.variances.assign(variances.begin(), variances.end());
    plan.perm.resize(variances.size());
    std::iota(plan.perm.begin(), plan.perm.end(), std::size_t{0});
    std::stable_sort(plan.perm.begin(), plan.perm.end(),
                     [&](std::size_t a, std::size_t b) { return plan.variances[a] > plan.variances[b]; });
    plan.p = p;
    plan.selected_count = top_count(p, variances.size());
    return plan;
}

/// Learned embedding, one row per patch grid position.
///
/// When the live grid differs from the table grid, each patch reads the row
/// at its nearest table position, so one table serves every input size.
struct PositionTable {
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
    Tensor rows;  // [grid_rows*grid_cols, C]

    std::size_t row_for(std::size_t patch, std::size_t live_rows, std::size_t live_cols) const {
        if (live_rows == 0 || live_cols == 0 || patch >= live_rows * live_cols) {
            throw ArgumentError("position embedding: patch index out of range");
        }
        const std::size_t r = patch / live_cols, c = patch % live_cols;
        const std::size_t tr = live_rows == grid_rows ? r : r * grid_rows / live_rows;
        const std::size_t tc = live_cols == grid_cols ? c : c * grid_cols / live_cols;
        const std::size_t idx = tr * grid_cols + tc;
        if (idx >= rows.dim(0)) throw ArgumentError("position embedding: table row out of range");
        return idx;
    }
};

/// Adds table[grid position of the token's patch] to every token row.
/// token_patch[t] is the ORIGINAL grid index of the patch owning token t.
inline Tensor add_position_embedding(const Tensor& tokens, std::span<const std::size_t> token_patch,
                                     const PositionTable& table, std::size_t live_rows, std::size_t live_cols) {
    if (tokens.rank() != 2 || token_patch.size() != tokens.dim(0)) {
        throw ShapeError("add_position_embedding: one patch index per token required");
    }
    if (table.rows.rank() != 2 || table.rows.dim(1) != tokens.dim(1)) {
        throw ShapeError("add_position_embedding: table width differs from token width");
    }
    std::vector<std::size_t> idx(token_patch.size());
    for (std::size_t t = 0; t < idx.size(); ++t) idx[t] = table.row_for(token_patch[t], live_rows, live_cols);
    return tokens + gather_rows(table.rows, idx);
}

/// Puts processed patches (in plan order) back into their grid slots and
/// leaves every other patch of `original` untouched.
inline Tensor scatter_back(const std::vector<Tensor>& processed, const Tensor& original, const PatchPlan& plan,
                           std::size_t patch_h, std::size_t patch_w) {
    if (processed.size() != plan.selected_count) {
        throw ShapeError("scatter_back: expected " + std::to_string(plan.selected_count) + " processed patches");
    }
    const PatchGeometry g = geometry(original.shape(), patch_h, patch_w);
    if (g.count() != plan.count()) throw ShapeError("scatter_back: plan does not match the feature grid");
    std::vector<Tensor> patches = patchify(original, patch_h, patch_w);
    for (std::size_t i = 0; i < processed.size(); ++i) patches[plan.perm[i]] = processed[i];
    return unpatchify(patches, g);
}

}  // namespace tamamba::texture
