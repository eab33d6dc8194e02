//! Land-cover class vocabulary and the curated crop allow-list.

/// The 25 curated classes kept for training, in label order.
pub const CURATED_CLASSES: [&str; 25] = [
    "Corn",
    "Soybeans",
    "Rice",
    "Alfalfa",
    "Grapes",
    "Almonds",
    "Pecans",
    "Peanuts",
    "Walnuts",
    "Potatoes",
    "Oats",
    "Cotton",
    "Dry beans",
    "Sugarbeets",
    "Winter Wheat",
    "Spring Wheat",
    "Durum Wheat",
    "Sorghum",
    "Canola",
    "Barley",
    "Sunflower",
    "Pop or Orn Corn",
    "Other Hay-Non Alfalfa",
    "Woody Wetlands",
    "Fallow-Idle Cropland",
];

/// Cropland Data Layer names that may appear in raw data but are not curated.
pub const OTHER_CDL_CLASSES: &[&str] = &[
    "Water",
    "Open Water",
    "Developed",
    "Developed/Open Space",
    "Developed/Low Intensity",
    "Developed/Med Intensity",
    "Developed/High Intensity",
    "Barren",
    "Deciduous Forest",
    "Evergreen Forest",
    "Mixed Forest",
    "Shrubland",
    "Grassland/Pasture",
    "Herbaceous Wetlands",
    "Perennial Ice/Snow",
    "Clouds/No Data",
    "Tobacco",
    "Millet",
    "Rye",
    "Speltz",
    "Flaxseed",
    "Safflower",
    "Rape Seed",
    "Mustard",
    "Sugarcane",
    "Lentils",
    "Peas",
    "Chick Peas",
    "Dbl Crop WinWht/Soybeans",
    "Dbl Crop WinWht/Corn",
    "Dbl Crop Oats/Corn",
    "Dbl Crop Barley/Sorghum",
    "Dbl Crop WinWht/Sorghum",
    "Dbl Crop WinWht/Cotton",
    "Dbl Crop Soybeans/Cotton",
    "Citrus",
    "Oranges",
    "Apples",
    "Cherries",
    "Peaches",
    "Pistachios",
    "Olives",
    "Tomatoes",
    "Onions",
    "Sweet Corn",
    "Clover/Wildflowers",
    "Sod/Grass Seed",
    "Switchgrass",
    "Other Crops",
    "Other Small Grains",
    "Misc Vegs & Fruits",
    "Herbs",
    "Camelina",
    "Triticale",
    "Buckwheat",
    "Aquaculture",
    "Nonag/Undefined",
];

/// Whether `name` is a recognized land-cover class.
pub fn is_known_class(name: &str) -> bool {
    CURATED_CLASSES.contains(&name) || OTHER_CDL_CLASSES.contains(&name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curated_list_has_25_unique_entries() {
        let mut names = CURATED_CLASSES.to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 25);
        assert!(CURATED_CLASSES.contains(&"Corn"));
        assert!(!CURATED_CLASSES.contains(&"Water"));
        assert!(OTHER_CDL_CLASSES.iter().all(|c| !CURATED_CLASSES.contains(c)));
    }
}
