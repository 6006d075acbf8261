// Bundle entry. The proxy substitutes both placeholder strings when it
// injects the built snippet into a page.

import { installSelfHealMonitor, MonitorWindow } from "./monitor";

// typed structurally instead of pulling in the whole DOM lib
declare var window: MonitorWindow;

installSelfHealMonitor(window, "__SELFHEAL_PAGE_UUID__", "__SELFHEAL_ENDPOINT__");
