//! Word lists for generated worlds. In-domain and out-of-domain apps draw
//! from disjoint lists so the OOD split shares no surface text with IDD.

pub struct Vocab {
    pub app_names: &'static [&'static str],
    pub labels: &'static [&'static str],
    pub objects: &'static [&'static str],
    pub phrases: &'static [&'static str],
}

pub const VERBS: &[&str] = &[
    "Book", "Cancel", "Track", "Share", "Rate", "Save", "Delete", "Edit", "Renew", "Report", "Pause", "Schedule",
];

pub const IDD: Vocab = Vocab {
    app_names: &[
        "RideNow", "ShopMart", "NoteKeeper", "MapQuest", "ChatWave", "FitTrack", "BankEasy", "PhotoBox", "MailHub",
        "TuneBox", "FoodDash", "CalendarPro", "WeatherLive", "NewsFeed", "CloudDrive", "VideoStream", "ReadMore",
        "TravelGo", "HomeHub", "PetCare",
    ],
    labels: &[
        "Search", "Settings", "Profile", "Orders", "Cart", "Favorites", "History", "Messages", "Notifications",
        "Account", "Help", "Payments", "Addresses", "Coupons", "Wallet", "Friends", "Groups", "Photos", "Albums",
        "Playlists", "Library", "Downloads", "Uploads", "Drafts", "Inbox", "Sent", "Archive", "Trash", "Labels",
        "Filters", "Sort", "Share", "Details", "Reviews", "Ratings", "Support", "Feedback", "Privacy", "Security",
        "Language", "Theme", "Storage", "Backup", "Sync", "Devices", "Subscriptions", "Plans", "Offers", "Deals",
        "Categories", "Brands", "Stores", "Nearby", "Recent", "Popular", "Trending", "Saved", "Following",
        "Followers", "Events",
    ],
    objects: &[
        "taxi ride", "grocery order", "meeting note", "bus route", "group chat", "morning run", "bank transfer",
        "photo album", "email draft", "playlist", "dinner order", "calendar event", "weather alert", "news story",
        "shared folder", "movie rental", "ebook loan", "hotel booking", "thermostat schedule", "vet appointment",
        "parking spot", "gym class", "flight ticket", "concert ticket",
    ],
    phrases: &[
        "Paris", "coffee near me", "weekly report", "birthday party", "pizza", "running shoes", "jazz",
        "electric bill", "tomorrow 9am", "airport", "pharmacy", "hello team", "blue jacket", "train to Lyon",
    ],
};

pub const OOD: Vocab = Vocab {
    app_names: &[
        "Zentrix", "Quorval", "Lumisk", "Drovane", "Kestrel", "Obrith", "Vantor", "Yselle", "Mirelo", "Tavisk",
        "Corvane", "Ulmira", "Brisk", "Fennox", "Gildar",
    ],
    labels: &[
        "Ledger", "Vault", "Beacon", "Harbor", "Orbit", "Prism", "Quarry", "Relay", "Summit", "Tundra", "Umbra",
        "Vertex", "Willow", "Xenon", "Yonder", "Zephyr", "Anchor", "Bramble", "Cinder", "Dynamo", "Ember", "Fjord",
        "Glyph", "Hollow", "Iris", "Juniper", "Kiln", "Lattice", "Mosaic", "Nimbus", "Oasis", "Pylon", "Quill",
        "Rune", "Sable", "Talon", "Utopia", "Vigil", "Wander", "Axiom", "Bastion", "Cobalt", "Delta", "Eclipse",
        "Flux", "Garnet", "Helix", "Ion", "Jade", "Krypt", "Lumen", "Meridian", "Nova", "Onyx", "Pulsar", "Quasar",
        "Rift", "Solstice", "Tether", "Vortex",
    ],
    objects: &[
        "crystal shard", "drone patrol", "seed vault", "lunar survey", "reef census", "glacier map", "signal relay",
        "spore sample", "comet watch", "forge batch", "kite race", "tide chart", "mesh node", "rune ledger",
        "ember lamp", "orbit plan", "harbor permit", "prism lens",
    ],
    phrases: &[
        "zebra", "quantum knot", "violet ember", "north ridge", "delta seven", "amber tide", "silent orbit",
        "copper kite", "frost line", "granite path",
    ],
};
