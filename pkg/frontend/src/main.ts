import { App } from "./ui.js";

// served at /ui by the primid service, so API calls hit the same origin
const app = new App(document, "");
void app.init();
