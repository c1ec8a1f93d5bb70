#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rotpretext/clip.hpp"

namespace rotpretext {

/// Ordered list of distinct rotation angles in [0,360) degrees. The label
/// of a rotated clip is its index in this list.
class RotationSet {
public:
    RotationSet() = default;
    explicit RotationSet(std::vector<double> degrees);
    static RotationSet parse(const std::string& comma_separated);

    const std::vector<double>& degrees() const { return degrees_; }
    int k() const { return static_cast<int>(degrees_.size()); }
    bool right_angle_only() const;
    std::string to_string() const;

    /// Spatial extent of an expanded clip whose square input extent is s:
    /// s itself for right-angle sets, the shared valid crop otherwise.
    int expanded_extent(int s) const;

    /// Regression target for entry i: degrees/360 in [0,1).
    double regression_target(int i) const { return degrees_[static_cast<std::size_t>(i)] / 360.0; }

private:
    std::vector<double> degrees_;
};

/// Counterclockwise rotation by k*90 degrees, each step defined by
/// out[r][c] = in[c][W-1-r]. Lossless: the output is a permutation of the
/// input values. k in {0,1,2,3}; k odd swaps H and W.
VideoClip rotate90(const VideoClip& clip, int k);

/// Rotation by an arbitrary angle about the frame center with bilinear
/// sampling, followed by a center crop to valid_rotation_crop(S) so no
/// sample falls outside the source for any angle. Square frames only.
VideoClip rotate_arbitrary(const VideoClip& clip, double degrees);

/// floor(S / sqrt(2)) rounded down to even.
int valid_rotation_crop(int s);

/// One clip per (input clip, rotation) pair, clip-major, each with its
/// rotation index. Right-angle sets use the exact path; any other set runs
/// every angle through rotate_arbitrary so all variants share one extent.
std::vector<std::pair<VideoClip, int>> expand_with_rotations(const std::vector<VideoClip>& clips,
                                                             const RotationSet& set);

/// Stacks the expansion into one [B*K, C, T, H, W] batch plus labels.
std::pair<Tensor, std::vector<int>> expand_batch_with_rotations(
    const std::vector<VideoClip>& clips, const RotationSet& set);

/// Stacks already-expanded clips (e.g. after a difference transform).
Tensor stack_clips(const std::vector<VideoClip>& clips);

}  // namespace rotpretext
