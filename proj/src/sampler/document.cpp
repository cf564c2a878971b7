#include "hdr/sampler/document.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "hdr/conditions/conditions.h"
#include "hdr/error.h"
#include "hdr/random.h"
#include "hdr/tensor.h"

namespace hdr::sampler {

std::string_view to_string(RepairMode m) {
    switch (m) {
        case RepairMode::Repair: return "REPAIR";
        case RepairMode::Edit: return "EDIT";
        case RepairMode::TextBlock: return "TEXT_BLOCK";
    }
    return "?";
}

RepairMode parse_mode(std::string_view name) {
    if (name == "REPAIR") return RepairMode::Repair;
    if (name == "EDIT") return RepairMode::Edit;
    if (name == "TEXT_BLOCK") return RepairMode::TextBlock;
    throw ConfigError("unknown repair mode: " + std::string(name));
}

std::vector<Box> layout_text_block(const Box& region, int count) {
    if (count < 1 || region.empty()) return {};
    const double w = region.width(), h = region.height();
    int cols = static_cast<int>(std::lround(std::sqrt(count * w / h)));
    cols = std::clamp(cols, 1, count);
    const int rows = (count + cols - 1) / cols;
    const double cw = w / cols, ch = h / rows;
    std::vector<Box> out;
    for (int i = 0; i < count; ++i) {
        const int r = i / cols, c = i % cols;
        out.push_back({region.x0 + static_cast<int>(std::floor(c * cw)), region.y0 + static_cast<int>(std::floor(r * ch)),
                       region.x0 + static_cast<int>(std::floor((c + 1) * cw)),
                       region.y0 + static_cast<int>(std::floor((r + 1) * ch))});
    }
    return out;
}

std::vector<std::vector<int>> cluster_boxes(const std::vector<Box>& boxes) {
    const int n = static_cast<int>(boxes.size());
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            Box grown{boxes[i].x0 - 1, boxes[i].y0 - 1, boxes[i].x1 + 1, boxes[i].y1 + 1};
            if (grown.intersects(boxes[j])) parent[find(j)] = find(i);
        }
    std::vector<std::vector<int>> groups;
    std::vector<int> slot(n, -1);
    for (int i = 0; i < n; ++i) {
        const int root = find(i);
        if (slot[root] < 0) {
            slot[root] = static_cast<int>(groups.size());
            groups.emplace_back();
        }
        groups[slot[root]].push_back(i);
    }
    return groups;
}

namespace {

std::vector<int> axis_positions(int lo, int hi, int window, int page) {
    const int extent = hi - lo;
    std::vector<int> pos;
    if (extent <= window) {
        pos.push_back(lo + extent / 2 - window / 2);
    } else {
        const double stride = 0.75 * window;
        const int n = static_cast<int>(std::ceil((extent - window) / stride)) + 1;
        for (int i = 0; i < n; ++i)
            pos.push_back(lo + static_cast<int>(std::lround(static_cast<double>(extent - window) * i / (n - 1))));
    }
    for (auto& p : pos) p = std::clamp(p, 0, page - window);
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    return pos;
}

// Bounding boxes of 8-connected components, in raster order of their first pixel.
std::vector<Box> component_boxes(const Mask& mask) {
    std::vector<Box> out;
    Mask seen(mask.height(), mask.width());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) {
            if (!mask.at(y, x) || seen.at(y, x)) continue;
            Box b{x, y, x + 1, y + 1};
            std::queue<std::pair<int, int>> q;
            q.push({x, y});
            seen.at(y, x) = 1;
            while (!q.empty()) {
                auto [cx, cy] = q.front();
                q.pop();
                b = b.united({cx, cy, cx + 1, cy + 1});
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= mask.width() || ny >= mask.height()) continue;
                        if (mask.at(ny, nx) && !seen.at(ny, nx)) {
                            seen.at(ny, nx) = 1;
                            q.push({nx, ny});
                        }
                    }
            }
            out.push_back(b);
        }
    return out;
}

void validate_edits(const Image& page, const std::vector<Edit>& edits, const DocumentRepairConfig& cfg,
                    const corpus::Alphabet& alphabet) {
    if (cfg.window < 8) throw ConfigError("window must be >= 8");
    if ((cfg.mode == RepairMode::Edit || cfg.mode == RepairMode::TextBlock) && edits.empty())
        throw PreconditionError(std::string(to_string(cfg.mode)) + " needs at least one edit");
    if (cfg.extra_mask && (cfg.extra_mask->height() != page.height() || cfg.extra_mask->width() != page.width()))
        throw ShapeError("mask size differs from the page");
    const Box page_box{0, 0, page.width(), page.height()};
    for (std::size_t i = 0; i < edits.size(); ++i) {
        const auto& e = edits[i];
        const std::string where = "edit " + std::to_string(i);
        if (!e.bbox.valid()) throw PreconditionError(where + ": empty box");
        if (!page_box.contains(e.bbox)) throw PreconditionError(where + ": box outside the page");
        const auto chars = corpus::split_codepoints(e.text);
        if (cfg.mode == RepairMode::Edit && chars.size() != 1)
            throw PreconditionError(where + ": EDIT needs exactly one character");
        if (cfg.mode == RepairMode::TextBlock && chars.empty())
            throw PreconditionError(where + ": TEXT_BLOCK needs at least one character");
        if (cfg.mode == RepairMode::Repair && chars.size() > 1)
            throw PreconditionError(where + ": REPAIR takes at most one character per box");
        for (const auto& c : chars)
            if (!alphabet.contains(c)) throw PreconditionError(where + ": character not in alphabet: " + c);
    }
}

}  // namespace

std::vector<Box> place_windows(const Box& region, int window, int page_width, int page_height) {
    if (page_width < window || page_height < window) throw PreconditionError("page smaller than the window");
    std::vector<Box> out;
    for (int y : axis_positions(region.y0, region.y1, window, page_height))
        for (int x : axis_positions(region.x0, region.x1, window, page_width))
            out.push_back({x, y, x + window, y + window});
    return out;
}

DocumentRepairResult repair_document(const ModelFn& model, const diffusion::NoiseSchedule& schedule,
                                     const corpus::Alphabet& alphabet, const Image& page,
                                     const std::vector<Edit>& edits, const DocumentRepairConfig& cfg) {
    const Image rgb = page.channels() == 3 ? page : page.to_rgb();
    validate_edits(rgb, edits, cfg, alphabet);
    cfg.scales.validate();
    cfg.sampler.validate(schedule.T_max);

    const int W = cfg.window;
    const int pw = std::max(W, rgb.width()), ph = std::max(W, rgb.height());
    // Pages smaller than the window are padded with white and cropped back at the end.
    Image work(ph, pw, 3, 1.0f);
    work.paste(rgb, 0, 0);

    // Regions: edit boxes first, then components of the extra mask.
    std::vector<Box> regions;
    for (const auto& e : edits) regions.push_back(e.bbox);
    Mask full_mask(ph, pw);
    if (cfg.extra_mask && cfg.mode == RepairMode::Repair) {
        for (const Box& b : component_boxes(*cfg.extra_mask)) regions.push_back(b);
        for (int y = 0; y < page.height(); ++y)
            for (int x = 0; x < page.width(); ++x)
                if (cfg.extra_mask->at(y, x)) full_mask.at(y, x) = 1;
    }
    for (const auto& e : edits) full_mask.fill_box(e.bbox);

    DocumentRepairResult result;
    result.mask = Mask(page.height(), page.width());
    for (int y = 0; y < page.height(); ++y)
        for (int x = 0; x < page.width(); ++x) result.mask.at(y, x) = full_mask.at(y, x);
    if (regions.empty()) {
        result.repaired = page;
        return result;
    }

    std::uint64_t window_index = 0;
    for (const auto& group : cluster_boxes(regions)) {
        Box extent = regions[group.front()];
        Mask cluster_mask(ph, pw);
        std::vector<corpus::CharAnnotation> glyphs;
        std::vector<int> edit_ids;
        for (int r : group) {
            extent = extent.united(regions[r]);
            const Box& b = regions[r];
            for (int y = b.y0; y < b.y1; ++y)
                for (int x = b.x0; x < b.x1; ++x) cluster_mask.at(y, x) = full_mask.at(y, x);
            if (r >= static_cast<int>(edits.size())) continue;
            edit_ids.push_back(r);
            const auto chars = corpus::split_codepoints(edits[r].text);
            if (cfg.mode == RepairMode::TextBlock) {
                auto cells = layout_text_block(b, static_cast<int>(chars.size()));
                for (std::size_t k = 0; k < chars.size(); ++k) glyphs.push_back({cells[k], chars[k]});
            } else if (!chars.empty()) {
                glyphs.push_back({b, chars.front()});
            }
        }

        Image damaged = work;
        if (cfg.mode != RepairMode::Repair)
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x)
                    if (cluster_mask.at(y, x))
                        for (int c = 0; c < 3; ++c) damaged.at(y, x, c) = conditions::NullConditionPolicy::kDamagedNull;
        const Image content = conditions::render_content_image(glyphs, ph, pw, alphabet);
        const Image mask_image = cluster_mask.to_image();

        Image acc(ph, pw, 3, 0.0f);
        Image weight(ph, pw, 1, 0.0f);
        for (const Box& win : place_windows(extent, W, pw, ph)) {
            SamplerConfig sc = cfg.sampler;
            sc.seed = mix_seed(cfg.sampler.seed, window_index++);
            auto x_d = to_tensor(damaged.crop(win)).unsqueeze(0);
            auto x_c = to_tensor(content.crop(win)).unsqueeze(0);
            auto x_m = to_tensor(mask_image.crop(win), Range::Unit).unsqueeze(0);
            const Image out = to_image(sample_repair(model, x_d, x_c, x_m, cfg.scales, sc, schedule), Range::Unit);
            for (int y = 0; y < W; ++y)
                for (int x = 0; x < W; ++x) {
                    const int py = win.y0 + y, px = win.x0 + x;
                    if (!cluster_mask.at(py, px)) continue;
                    const float w = static_cast<float>(std::min({y + 1, W - y, x + 1, W - x}));
                    for (int c = 0; c < 3; ++c) acc.at(py, px, c) += w * out.at(y, x, c);
                    weight.at(py, px) += w;
                }
            result.windows.push_back({win, edit_ids});
        }
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x)
                if (cluster_mask.at(y, x) && weight.at(y, x) > 0.0f)
                    for (int c = 0; c < 3; ++c) work.at(y, x, c) = acc.at(y, x, c) / weight.at(y, x);
    }

    Image out = work.crop({0, 0, page.width(), page.height()});
    if (page.channels() == 1) out = out.to_gray();
    result.repaired = std::move(out);
    return result;
}

}  // namespace hdr::sampler
