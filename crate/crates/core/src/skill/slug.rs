use uuid::Uuid;

/// Directory-safe slug for a skill name.
///
/// Lowercases, collapses every run of non-alphanumeric characters into a
/// single `-` and trims dashes from both ends. Letters outside Latin are kept.
/// Falls back to the first 8 hex digits of `id` when nothing survives.
pub fn slugify(name: &str, id: &Uuid) -> String {
    let mut slug = String::with_capacity(name.len());
    let mut pending_dash = false;
    for ch in name.chars() {
        if ch.is_alphanumeric() {
            if pending_dash && !slug.is_empty() {
                slug.push('-');
            }
            pending_dash = false;
            slug.extend(ch.to_lowercase().filter(|c| c.is_alphanumeric()));
        } else {
            pending_dash = true;
        }
    }
    if slug.is_empty() {
        id.simple().to_string()[..8].to_string()
    } else {
        slug
    }
}
