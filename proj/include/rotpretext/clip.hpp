#pragma once

#include <string>

#include "rotpretext/tensor.hpp"

namespace rotpretext {

/// A video clip: rank-4 tensor laid out [C][T][H][W]. RGB-style clips hold
/// values in [0,1]; difference clips hold values in [-1,1].
struct VideoClip {
    Tensor tensor;

    VideoClip() = default;
    explicit VideoClip(Tensor t);
    static VideoClip zeros(int c, int t, int h, int w);

    int channels() const { return tensor.extent(0); }
    int frames() const { return tensor.extent(1); }
    int height() const { return tensor.extent(2); }
    int width() const { return tensor.extent(3); }

    float& at(int c, int t, int h, int w);
    const float& at(int c, int t, int h, int w) const;
};

/// Raw clip file: magic "RVC1", u32 C, u32 T, u32 H, u32 W (little-endian),
/// then C*T*H*W f32 values in [c][t][h][w] order.
inline constexpr char kClipMagic[4] = {'R', 'V', 'C', '1'};

VideoClip load_clip(const std::string& path);
void save_clip(const VideoClip& clip, const std::string& path);

/// Frames [s, s+length) for a uniformly random valid start s.
VideoClip sample_subclip(const VideoClip& clip, int length, Rng& rng);

/// Per-frame bilinear interpolation with half-pixel centers; neighbor
/// indices clamp at the border. Identity extents return the clip unchanged.
VideoClip resize_bilinear(const VideoClip& clip, int out_h, int out_w);

enum class CropMode { kRandom, kCenter };

VideoClip spatial_crop(const VideoClip& clip, int top, int left, int size);
VideoClip spatial_crop(const VideoClip& clip, int size, CropMode mode, Rng* rng);

/// Reverses the W axis of every frame with the given probability; the
/// decision is made once per clip.
VideoClip horizontal_flip(const VideoClip& clip, double probability, Rng& rng);

/// Difference of frames: output frame t = frame t+1 - frame t; T-1 frames.
VideoClip compute_dif(const VideoClip& clip);

}  // namespace rotpretext
