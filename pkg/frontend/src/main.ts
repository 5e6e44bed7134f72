import { createApp } from "./app";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
const app = createApp(root, { baseUrl: "" });
void app.retryConnection();
