#pragma once

#include "meshgs/common.hpp"
#include "meshgs/isosurface.hpp"

#include <string>

namespace meshgs {

enum class ModifierKind { Twist, Bend, Taper, Stretch, Rigid };

/// Closed-form vertex maps, all about the z axis of the mesh:
///   twist   rotate (x, y) by amount * (z - z_min) radians
///   bend    wrap the column onto a circular arc of curvature `amount` in the
///           x-z plane, starting at z_min
///   taper   scale (x, y) by 1 + (amount - 1) (z - z_min) / (z_max - z_min)
///   stretch scale z by `amount` about z_min and (x, y) by 1 / sqrt(amount)
///   rigid   x -> rotation * x + translation
/// z_min / z_max come from the undeformed mesh (see bind_to()).
struct Modifier {
    ModifierKind kind = ModifierKind::Twist;
    double amount = 0.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double z_min = 0.0;
    double z_max = 1.0;

    /// True when the map is the identity (no vertex changes at all).
    bool is_identity() const;
    Vec3 apply(const Vec3& p) const;
    /// Records the z range of the mesh the modifier acts on.
    Modifier& bind_to(const Mesh& mesh);
};

/// Parses "twist" | "bend" | "taper" | "stretch" | "rigid". Throws
/// ConfigError for anything else.
ModifierKind parse_modifier_kind(const std::string& name);
std::string modifier_name(ModifierKind kind);

/// Returns a copy with every vertex mapped; faces are untouched.
Mesh deform_mesh(const Mesh& mesh, const Modifier& modifier);

} // namespace meshgs
