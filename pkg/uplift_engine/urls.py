"""
URL configuration for uplift_engine project.

Nur die Admin-Oberfläche für das Run-Ledger, kein Serving.
"""
from django.contrib import admin
from django.urls import path

admin.site.site_header = "Uplift Engine Administration"
admin.site.site_title = "Uplift Engine Admin"
admin.site.index_title = "Run-Ledger"

urlpatterns = [
    path('admin/', admin.site.urls),
]
