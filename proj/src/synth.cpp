#include "rotpretext/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace rotpretext {

const char* motion_class_name(MotionClass c) {
    switch (c) {
        case MotionClass::kTranslateUp: return "translate_up";
        case MotionClass::kTranslateRight: return "translate_right";
        case MotionClass::kOscillate: return "oscillate";
        case MotionClass::kExpandContract: return "expand_contract";
    }
    return "unknown";
}

namespace {

struct Particle {
    float x, y, vx, vy, delta;
};

float clamp01(float v) { return v < 0.f ? 0.f : (v > 1.f ? 1.f : v); }

// Per-channel tint so 3-channel clips are not three identical planes.
float tint(int channel, int channels, float v) {
    if (channels == 1) return v;
    static constexpr float f[3] = {1.0f, 0.92f, 0.84f};
    return v * f[channel];
}

// Smooth per-clip value noise: a coarse random grid upsampled bilinearly.
// Static across frames so it varies appearance without adding motion.
struct ValueNoise {
    static constexpr int kGrid = 6;
    float grid[kGrid][kGrid];
    float amplitude;

    ValueNoise(Rng& rng, float amp) : amplitude(amp) {
        for (auto& row : grid)
            for (auto& v : row) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }

    float at(int y, int x, int h, int w) const {
        const float gy = static_cast<float>(y) / (h - 1) * (kGrid - 1);
        const float gx = static_cast<float>(x) / (w - 1) * (kGrid - 1);
        const int y0 = std::min(static_cast<int>(gy), kGrid - 2);
        const int x0 = std::min(static_cast<int>(gx), kGrid - 2);
        const float fy = gy - y0, fx = gx - x0;
        const float top = grid[y0][x0] + fx * (grid[y0][x0 + 1] - grid[y0][x0]);
        const float bot = grid[y0 + 1][x0] + fx * (grid[y0 + 1][x0 + 1] - grid[y0 + 1][x0]);
        return amplitude * (top + fy * (bot - top));
    }
};

enum class ShapeKind { kDisc, kSquare, kDiamond };

}  // namespace

RenderedClip render_synthetic_clip(const SynthSpec& spec, MotionClass cls, int index) {
    if (spec.channels != 1 && spec.channels != 3)
        throw ConfigError("synthetic clips support 1 or 3 channels");
    if (spec.frames < 2 || spec.height < 12 || spec.width < 12)
        throw ConfigError("synthetic clip extents too small");
    if (!(spec.cue_strength > 0.0) || spec.cue_strength > 1.0)
        throw ConfigError("cue_strength must be in (0,1]");

    const int T = spec.frames, H = spec.height, W = spec.width, C = spec.channels;
    Rng rng = Rng(spec.seed).fork(static_cast<std::uint64_t>(static_cast<int>(cls)) * 0x100000ULL +
                                  static_cast<std::uint64_t>(index));

    // Per-clip scene appearance. The upright cues (sky gradient, ground bar,
    // falling particles) are always present but their look varies clip to
    // clip, so neither rotation nor action is readable from any one constant.
    const float lam = static_cast<float>(spec.cue_strength) *
                      static_cast<float>(rng.uniform(0.45, 1.0));
    const float light = static_cast<float>(rng.uniform(0.4, 0.65));
    const float grad_span = 0.5f * lam;  // top-to-bottom luminance drop
    const ValueNoise noise(rng, static_cast<float>(rng.uniform(0.04, 0.16)));
    const int ground_row = static_cast<int>(H * static_cast<float>(rng.uniform(0.82, 0.9)));
    const float ground_shade = static_cast<float>(rng.uniform(0.05, 0.18));

    const int particle_count = std::max(6, (H * W) / 120);
    std::vector<Particle> particles(static_cast<std::size_t>(particle_count));
    for (auto& p : particles) {
        p.x = static_cast<float>(rng.uniform(0.0, W));
        p.y = static_cast<float>(rng.uniform(0.0, H));
        p.vx = static_cast<float>(rng.uniform(-0.25, 0.25));
        p.vy = static_cast<float>(rng.uniform(0.9, 1.8));  // always downward
        const float mag = static_cast<float>(rng.uniform(0.3, 0.55)) * lam;
        p.delta = rng.uniform() < 0.75 ? mag : -mag;
    }

    // Foreground shape: varied look, class-specific trajectory.
    const double kind_draw = rng.uniform();
    const ShapeKind kind = kind_draw < 0.34   ? ShapeKind::kDisc
                           : kind_draw < 0.67 ? ShapeKind::kSquare
                                              : ShapeKind::kDiamond;
    const bool bright = rng.uniform() < 0.5;
    const float shade =
        clamp01(light + (bright ? 1.f : -1.f) * static_cast<float>(rng.uniform(0.3, 0.45)));
    const float s0 = static_cast<float>(rng.uniform(H / 8.0, H / 5.5));  // half-size
    const float margin = s0 * 1.6f + 2.0f;

    auto uniform_between = [&rng](float lo, float hi) {
        // Degenerate spans (tiny frames) collapse toward the midpoint.
        return static_cast<float>(rng.uniform(std::min(lo, hi), std::max(lo, hi)));
    };
    // Caps a per-frame speed so the full travel stays inside the frame.
    auto cap_speed = [T](float v, float available) {
        const float cap = available > 0.f ? available / static_cast<float>(T - 1) : 0.05f;
        return std::max(0.05f, std::min(v, cap));
    };

    float cx0 = 0, cy0 = 0, vx = 0, vy = 0, amp = 0, period = 6, phase = 0;
    switch (cls) {
        case MotionClass::kTranslateUp: {
            vy = cap_speed(static_cast<float>(rng.uniform(0.9, 1.6)), H - 2 * margin);
            const float travel = vy * (T - 1);
            cy0 = uniform_between(margin + travel, H - margin);
            cx0 = uniform_between(margin, W - margin);
            break;
        }
        case MotionClass::kTranslateRight: {
            vx = cap_speed(static_cast<float>(rng.uniform(0.9, 1.6)), W - 2 * margin);
            const float travel = vx * (T - 1);
            cx0 = uniform_between(margin, W - margin - travel);
            cy0 = uniform_between(margin, H - margin);
            break;
        }
        case MotionClass::kOscillate: {
            amp = static_cast<float>(rng.uniform(2.0, 4.0));
            amp = std::max(1.0f, std::min(amp, (W - 2 * margin) / 2));
            period = static_cast<float>(rng.uniform(4.0, 8.0));
            phase = static_cast<float>(rng.uniform(0.0, 6.28318530717958647692));
            cx0 = uniform_between(margin + amp, W - margin - amp);
            cy0 = uniform_between(margin, H - margin);
            break;
        }
        case MotionClass::kExpandContract: {
            period = static_cast<float>(rng.uniform(5.0, 9.0));
            phase = static_cast<float>(rng.uniform(0.0, 6.28318530717958647692));
            cx0 = uniform_between(margin, W - margin);
            cy0 = uniform_between(margin, H - margin);
            break;
        }
    }

    RenderedClip out;
    out.clip = VideoClip::zeros(C, T, H, W);
    out.centers.reserve(static_cast<std::size_t>(T));
    constexpr float kTau = 6.28318530717958647692f;

    for (int t = 0; t < T; ++t) {
        float cx = cx0, cy = cy0, s = s0;
        switch (cls) {
            case MotionClass::kTranslateUp: cy = cy0 - vy * t; break;
            case MotionClass::kTranslateRight: cx = cx0 + vx * t; break;
            case MotionClass::kOscillate: cx = cx0 + amp * std::sin(kTau * t / period + phase); break;
            case MotionClass::kExpandContract:
                s = s0 * (1.0f + 0.45f * std::sin(kTau * t / period + phase));
                break;
        }
        out.centers.push_back({cx, cy});

        for (int y = 0; y < H; ++y) {
            // Sky gradient, bright at the top.
            float base = light + grad_span * (0.5f - static_cast<float>(y) / (H - 1));
            if (y >= ground_row) base = light * (1.f - lam) + ground_shade * lam;
            for (int x = 0; x < W; ++x) {
                float v = base + noise.at(y, x, H, W);
                const float dx = x - cx, dy = y - cy;
                bool inside = false;
                switch (kind) {
                    case ShapeKind::kDisc: inside = dx * dx + dy * dy <= s * s; break;
                    case ShapeKind::kSquare:
                        inside = std::abs(dx) <= s && std::abs(dy) <= s;
                        break;
                    case ShapeKind::kDiamond: inside = std::abs(dx) + std::abs(dy) <= s; break;
                }
                if (inside) v = shade;
                for (int c = 0; c < C; ++c)
                    out.clip.at(c, t, y, x) = clamp01(tint(c, C, v));
            }
        }

        for (const auto& p : particles) {
            const float fy = p.y + p.vy * t;
            const float fx = p.x + p.vx * t;
            const int py = static_cast<int>(fy - std::floor(fy / H) * H);
            const int px = static_cast<int>(fx - std::floor(fx / W) * W);
            if (py < 0 || py >= H || px < 0 || px >= W) continue;
            // Two-pixel vertical streak so the fall direction reads at
            // stride-2 resolution.
            for (int dy = 0; dy < 2 && py + dy < H; ++dy)
                for (int c = 0; c < C; ++c) {
                    float& v = out.clip.at(c, t, py + dy, px);
                    v = clamp01(v + tint(c, C, p.delta * (dy == 0 ? 1.0f : 0.6f)));
                }
        }
    }
    return out;
}

LabeledDataset generate_synthetic_dataset(const SynthSpec& spec, const std::string& out_dir,
                                          const std::string& basename, Split split) {
    std::filesystem::create_directories(out_dir);
    std::vector<LabeledItem> relative;
    LabeledDataset out;
    out.split = split;
    out.class_count = kMotionClassCount;
    for (int cls = 0; cls < kMotionClassCount; ++cls) {
        for (int i = 0; i < spec.clips_per_class; ++i) {
            char name[128];
            std::snprintf(name, sizeof(name), "%s_c%d_%04d.rvc", basename.c_str(), cls, i);
            const auto path = std::filesystem::path(out_dir) / name;
            const auto rendered =
                render_synthetic_clip(spec, static_cast<MotionClass>(cls), i);
            save_clip(rendered.clip, path.string());
            relative.push_back({name, cls});
            out.items.push_back({path.string(), cls});
        }
    }
    save_index((std::filesystem::path(out_dir) / (basename + ".idx")).string(), relative);
    return out;
}

}  // namespace rotpretext
