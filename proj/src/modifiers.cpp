#include "meshgs/modifiers.hpp"

#include <cmath>

namespace meshgs {

bool Modifier::is_identity() const {
    switch (kind) {
    case ModifierKind::Twist:
    case ModifierKind::Bend:
        return amount == 0.0;
    case ModifierKind::Taper:
    case ModifierKind::Stretch:
        return amount == 1.0;
    case ModifierKind::Rigid:
        return rotation == Mat3::Identity() && translation == Vec3::Zero();
    }
    return false;
}

Vec3 Modifier::apply(const Vec3& p) const {
    if (is_identity()) return p;
    switch (kind) {
    case ModifierKind::Twist: {
        const double theta = amount * (p.z() - z_min);
        const double c = std::cos(theta), s = std::sin(theta);
        return {c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z()};
    }
    case ModifierKind::Bend: {
        const double radius = 1.0 / amount;
        const double theta = amount * (p.z() - z_min);
        const double arm = radius - p.x();
        return {radius - arm * std::cos(theta), p.y(), z_min + arm * std::sin(theta)};
    }
    case ModifierKind::Taper: {
        const double span = z_max - z_min;
        const double u = span > 0.0 ? (p.z() - z_min) / span : 0.0;
        const double s = 1.0 + (amount - 1.0) * u;
        return {s * p.x(), s * p.y(), p.z()};
    }
    case ModifierKind::Stretch: {
        const double lateral = 1.0 / std::sqrt(amount);
        return {lateral * p.x(), lateral * p.y(), z_min + amount * (p.z() - z_min)};
    }
    case ModifierKind::Rigid:
        return rotation * p + translation;
    }
    return p;
}

Modifier& Modifier::bind_to(const Mesh& mesh) {
    if (mesh.vertices.empty()) return *this;
    z_min = z_max = mesh.vertices.front().z();
    for (const Vec3& v : mesh.vertices) {
        z_min = std::min(z_min, v.z());
        z_max = std::max(z_max, v.z());
    }
    return *this;
}

ModifierKind parse_modifier_kind(const std::string& name) {
    if (name == "twist") return ModifierKind::Twist;
    if (name == "bend") return ModifierKind::Bend;
    if (name == "taper") return ModifierKind::Taper;
    if (name == "stretch") return ModifierKind::Stretch;
    if (name == "rigid") return ModifierKind::Rigid;
    throw ConfigError("unknown modifier '" + name + "' (expected twist, bend, taper, stretch or rigid)");
}

std::string modifier_name(ModifierKind kind) {
    switch (kind) {
    case ModifierKind::Twist: return "twist";
    case ModifierKind::Bend: return "bend";
    case ModifierKind::Taper: return "taper";
    case ModifierKind::Stretch: return "stretch";
    case ModifierKind::Rigid: return "rigid";
    }
    return "unknown";
}

Mesh deform_mesh(const Mesh& mesh, const Modifier& modifier) {
    if (modifier.kind == ModifierKind::Stretch && !(modifier.amount > 0.0))
        throw ConfigError("stretch factor must be positive");
    Mesh out;
    out.faces = mesh.faces;
    out.vertices.reserve(mesh.vertices.size());
    for (const Vec3& v : mesh.vertices) out.vertices.push_back(modifier.apply(v));
    return out;
}

} // namespace meshgs
